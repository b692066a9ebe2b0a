//! S-Procedure blocks for the ball-uncertain constraints, an exact
//! worst-case oracle for quadratic forms over a ball, and post-hoc robustness
//! validation.
//!
//! A block is an affine Hermitian matrix function of the real decision vector
//! `x`: `F(x) = F0 + sum_i x_i F_i`, required PSD. A Hermitian matrix
//! variable `W` of dimension `n` occupies `n^2` consecutive entries of `x`
//! (diagonal first, then real/imaginary parts of the strict upper triangle).

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::linalg::{eig_hermitian, quadratic_form, ComplexVector, HermitianMatrix, C64};
use crate::network::{perturb_with, ChannelEstimate, NetworkInstance};

/// Absolute tolerance (W) before a robust constraint counts as violated.
pub const VALIDATION_MARGIN: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarIndex(pub usize);

/// Location of a Hermitian matrix variable inside the flat decision vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HermitianVar {
    pub offset: usize,
    pub dim: usize,
}

impl HermitianVar {
    pub fn len(&self) -> usize {
        self.dim * self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.dim == 0
    }

    /// Coordinates in storage order: `(row, col, imaginary)`.
    fn coordinates(&self) -> Vec<(usize, usize, bool)> {
        let n = self.dim;
        let mut out: Vec<_> = (0..n).map(|i| (i, i, false)).collect();
        for i in 0..n {
            for j in (i + 1)..n {
                out.push((i, j, false));
                out.push((i, j, true));
            }
        }
        out
    }

    /// `(index, B_r)` with `W = sum_r x_r B_r`.
    pub fn basis(&self) -> Vec<(VarIndex, HermitianMatrix)> {
        let n = self.dim;
        self.coordinates()
            .into_iter()
            .enumerate()
            .map(|(r, (i, j, imag))| {
                let mut b = DMatrix::zeros(n, n);
                if i == j {
                    b[(i, i)] = C64::new(1.0, 0.0);
                } else if imag {
                    b[(i, j)] = C64::new(0.0, 1.0);
                    b[(j, i)] = C64::new(0.0, -1.0);
                } else {
                    b[(i, j)] = C64::new(1.0, 0.0);
                    b[(j, i)] = C64::new(1.0, 0.0);
                }
                (VarIndex(self.offset + r), HermitianMatrix::from_rounded(b))
            })
            .collect()
    }

    pub fn unpack(&self, x: &[f64]) -> HermitianMatrix {
        let n = self.dim;
        let mut m = DMatrix::zeros(n, n);
        for (r, (i, j, imag)) in self.coordinates().into_iter().enumerate() {
            let v = x[self.offset + r];
            if i == j {
                m[(i, i)] = C64::new(v, 0.0);
            } else if imag {
                m[(i, j)] += C64::new(0.0, v);
                m[(j, i)] += C64::new(0.0, -v);
            } else {
                m[(i, j)] += C64::new(v, 0.0);
                m[(j, i)] += C64::new(v, 0.0);
            }
        }
        HermitianMatrix::from_rounded(m)
    }

    pub fn pack(&self, w: &HermitianMatrix, x: &mut [f64]) {
        for (r, (i, j, imag)) in self.coordinates().into_iter().enumerate() {
            let z = w.get(i, j);
            x[self.offset + r] = if imag { z.im } else { z.re };
        }
    }

    /// Coefficients of the linear functional `W -> Tr(C W)`.
    pub fn trace_functional(&self, c: &HermitianMatrix) -> Vec<(VarIndex, f64)> {
        self.basis()
            .into_iter()
            .map(|(idx, b)| (idx, c.trace_product(&b).expect("matching dims")))
            .collect()
    }
}

/// `F0 + sum_i x_i F_i`, required PSD.
#[derive(Clone, Debug)]
pub struct LmiBlock {
    pub label: String,
    pub constant: HermitianMatrix,
    pub terms: Vec<(VarIndex, HermitianMatrix)>,
}

impl LmiBlock {
    pub fn dim(&self) -> usize {
        self.constant.dim()
    }

    pub fn evaluate(&self, x: &[f64]) -> HermitianMatrix {
        let mut acc = self.constant.clone();
        for (idx, f) in &self.terms {
            acc.axpy(x[idx.0], f);
        }
        acc
    }

    pub fn min_eigenvalue_at(&self, x: &[f64]) -> f64 {
        self.evaluate(x).min_eigenvalue()
    }
}

/// `O = [I | mean]`, of shape `n x (n+1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtendedChannel(DMatrix<C64>);

impl ExtendedChannel {
    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    /// `O^† X O = [[X, X m], [m^† X, m^† X m]]`
    pub fn sandwich(&self, x: &HermitianMatrix) -> HermitianMatrix {
        x.congruence(&self.0).expect("extended channel rows match")
    }
}

pub fn extend(est: &ChannelEstimate) -> ExtendedChannel {
    let n = est.dim();
    let mean = est.mean.entries();
    ExtendedChannel(DMatrix::from_fn(n, n + 1, |i, j| {
        if j == n {
            mean[i]
        } else if i == j {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    }))
}

/// `diag(s I_n, t)`
fn corner_diag(n: usize, s: f64, t: f64) -> HermitianMatrix {
    let mut d = vec![s; n];
    d.push(t);
    HermitianMatrix::from_real_diagonal(&d)
}

/// Multiplier term `diag(I, -radius^2)`.
fn multiplier_term(n: usize, radius: f64) -> HermitianMatrix {
    corner_diag(n, 1.0, -radius * radius)
}

/// `diag(mu I, p_in - mu xi^2) - O^† W O ⪰ 0`: certifies `e^† W e <= p_in`
/// for every `e` in the ball.
pub fn lmi_interference(e: &ChannelEstimate, p_in: f64, w: HermitianVar, mu: VarIndex) -> LmiBlock {
    let n = e.dim();
    let o = extend(e);
    let mut terms = vec![(mu, multiplier_term(n, e.radius))];
    terms.extend(w.basis().into_iter().map(|(idx, b)| (idx, o.sandwich(&b).scaled(-1.0))));
    LmiBlock { label: "interference".into(), constant: corner_diag(n, 0.0, p_in), terms }
}

/// `diag(v I, Tr(HW)/gamma - sigma^2 - v xi^2) - U^† W_p U ⪰ 0`: certifies the
/// SINR target for every PBS->SU channel in the ball. `None` when
/// `gamma_req == 0`, in which case the constraint is dropped.
pub fn lmi_sinr(inst: &NetworkInstance, w: HermitianVar, varpi: VarIndex) -> Option<LmiBlock> {
    if inst.gamma_req <= 0.0 {
        return None;
    }
    let n = inst.q_ps.dim();
    let u = extend(&inst.q_ps);
    let h = HermitianMatrix::outer(&inst.h);
    let constant = corner_diag(n, 0.0, -inst.sigma_s2).sub(&u.sandwich(&inst.w_p)).expect("same dim");
    let mut terms = vec![(varpi, multiplier_term(n, inst.q_ps.radius))];
    for (idx, coef) in w.trace_functional(&h) {
        if coef != 0.0 {
            terms.push((idx, corner_diag(n, 0.0, coef / inst.gamma_req)));
        }
    }
    Some(LmiBlock { label: "sinr".into(), constant, terms })
}

/// `diag(v I, delta - lambda - v xi^2) + O^† W O ⪰ 0`: certifies
/// `g^† W g >= lambda - delta` over the ball.
pub fn lmi_eh_signal(g: &ChannelEstimate, lambda: f64, w: HermitianVar, delta: VarIndex, varpi: VarIndex) -> LmiBlock {
    let n = g.dim();
    let o = extend(g);
    let mut terms = vec![(delta, corner_diag(n, 0.0, 1.0)), (varpi, multiplier_term(n, g.radius))];
    terms.extend(w.basis().into_iter().map(|(idx, b)| (idx, o.sandwich(&b))));
    LmiBlock { label: "eh_signal".into(), constant: corner_diag(n, 0.0, -lambda), terms }
}

/// `diag(b I, -delta - b xi^2) + U^† W_p U ⪰ 0`: certifies
/// `q^† W_p q >= delta` over the ball.
pub fn lmi_eh_interference(q: &ChannelEstimate, w_p: &HermitianMatrix, delta: VarIndex, beta: VarIndex) -> LmiBlock {
    let n = q.dim();
    let u = extend(q);
    LmiBlock {
        label: "eh_interference".into(),
        constant: u.sandwich(w_p),
        terms: vec![(delta, corner_diag(n, 0.0, -1.0)), (beta, multiplier_term(n, q.radius))],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Max,
    Min,
}

#[derive(Clone, Debug)]
pub struct WorstCase {
    pub value: f64,
    pub delta: ComplexVector,
}

/// Extremizes `(v + d)^† A (v + d)` over `|d| <= xi`.
///
/// Trust-region subproblem in the eigenbasis of `A`: the optimal `d`
/// satisfies `(B + nu I) d = -c` with `B = +-A`, `c = B v`, `nu >= max(0,
/// -lambda_min(B))`. `nu` is found by bisection on the secular equation
/// `|d(nu)| = xi`; the hard case (c orthogonal to the extreme eigenspace)
/// adds a component along that eigenspace to reach the boundary.
pub fn worst_case_quadratic(a: &HermitianMatrix, v: &ComplexVector, xi: f64, sense: Sense) -> Result<WorstCase> {
    let n = v.dim();
    let zero = ComplexVector::zeros(n);
    if xi == 0.0 {
        return Ok(WorstCase { value: quadratic_form(a, v)?, delta: zero });
    }
    let s = match sense {
        Sense::Min => 1.0,
        Sense::Max => -1.0,
    };
    let eig = eig_hermitian(a);
    let beta: Vec<f64> = eig.eigenvalues.iter().map(|l| s * l).collect();
    let y: Vec<C64> = eig.eigenvectors.iter().map(|u| u.inner(v).expect("dim")).collect();
    let c: Vec<C64> = beta.iter().zip(&y).map(|(b, yi)| yi * *b).collect();
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, l| m.max(l.abs())).max(f64::MIN_POSITIVE);
    let tiny = 1e-13 * scale;
    let beta_min = beta.iter().copied().fold(f64::INFINITY, f64::min);
    let c_norm = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();

    let from_coords = |d: &[C64]| -> ComplexVector {
        let mut acc = ComplexVector::zeros(n);
        for (di, u) in d.iter().zip(&eig.eigenvectors) {
            let term = ComplexVector::from_dvector(u.as_dvector() * *di).expect("finite");
            acc = acc.add(&term).expect("dim");
        }
        acc
    };
    let finish = |d: &[C64]| -> Result<WorstCase> {
        let delta = from_coords(d);
        let value = quadratic_form(a, &v.add(&delta)?)?;
        Ok(WorstCase { value, delta })
    };

    // interior stationary point (nu = 0) for a convex objective
    if beta_min >= -tiny {
        let d0: Vec<C64> =
            beta.iter().zip(&y).map(|(b, yi)| if *b > tiny { -*yi } else { C64::new(0.0, 0.0) }).collect();
        let norm0 = d0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm0 <= xi {
            return finish(&d0);
        }
    }

    let d_of = |nu: f64| -> Vec<C64> { beta.iter().zip(&c).map(|(b, ci)| -*ci / (b + nu)).collect() };
    let norm_of = |d: &[C64]| d.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let nu_lo = (-beta_min).max(0.0);

    // hard case: no weight of c on the extreme eigenspace
    let extreme: Vec<bool> = beta.iter().map(|b| (b - beta_min).abs() <= tiny).collect();
    let c_extreme: f64 = c.iter().zip(&extreme).filter(|(_, e)| **e).map(|(z, _)| z.norm_sqr()).sum::<f64>().sqrt();
    if c_extreme <= 1e-14 * c_norm.max(f64::MIN_POSITIVE) || c_norm == 0.0 {
        let mut d: Vec<C64> = beta
            .iter()
            .zip(&c)
            .zip(&extreme)
            .map(|((b, ci), e)| if *e { C64::new(0.0, 0.0) } else { -*ci / (b + nu_lo) })
            .collect();
        let partial = norm_of(&d);
        if partial <= xi {
            let i = extreme.iter().position(|e| *e).expect("extreme eigenvalue exists");
            d[i] = C64::new((xi * xi - partial * partial).max(0.0).sqrt(), 0.0);
            return finish(&d);
        }
    }

    let mut lo = nu_lo;
    let mut hi = (c_norm / xi - beta_min).max(nu_lo);
    // make sure |d(hi)| <= xi before bisecting
    while norm_of(&d_of(hi)) > xi {
        hi = 2.0 * hi + scale;
    }
    for _ in 0..400 {
        if hi - lo <= 1e-13 * hi.abs().max(scale) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if norm_of(&d_of(mid)) > xi {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    finish(&d_of(hi))
}

/// Multiplier values returned by a robust solve, used to re-check the LMI
/// certificates. Entries are `None` where the corresponding block was not
/// part of the program.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SlackValues {
    pub mu: Vec<f64>,
    pub varpi_q: Option<f64>,
    pub varpi_g: Vec<Option<f64>>,
    pub beta: Vec<Option<f64>>,
    pub delta: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintCheck {
    pub name: String,
    /// Constraint slack at the exact worst case (W); negative is a violation.
    pub exact_margin: f64,
    /// Smallest slack over the boundary samples, if any were drawn.
    pub sampled_margin: Option<f64>,
    pub violated: bool,
    /// Samples never beat the exact oracle.
    pub oracle_consistent: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<ConstraintCheck>,
    /// `(block label, min eigenvalue)` for each re-evaluated certificate.
    pub certificates: Vec<(String, f64)>,
    pub samples: usize,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| !c.violated && c.oracle_consistent)
    }

    pub fn worst_margin(&self) -> f64 {
        self.checks.iter().map(|c| c.exact_margin).fold(f64::INFINITY, f64::min)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "robust validation ({} boundary samples per ball)", self.samples);
        for c in &self.checks {
            let sampled = c.sampled_margin.map_or("-".to_string(), |m| format!("{m:.6e}"));
            let flag = if c.violated {
                "VIOLATED"
            } else if !c.oracle_consistent {
                "ORACLE MISMATCH"
            } else {
                "ok"
            };
            let _ = writeln!(out, "  {:<16} exact {:>14.6e} W  sampled {:>14} W  {}", c.name, c.exact_margin, sampled, flag);
        }
        for (label, eig) in &self.certificates {
            let _ = writeln!(out, "  certificate {label:<16} min eig {eig:.3e}");
        }
        let _ = writeln!(out, "  result: {}", if self.passed() { "PASS" } else { "FAIL" });
        out
    }

    pub const CSV_HEADER: [&'static str; 5] =
        ["constraint", "exact_margin_w", "sampled_margin_w", "violated", "oracle_consistent"];

    pub fn csv_records(&self) -> Vec<[String; 5]> {
        self.checks
            .iter()
            .map(|c| {
                [
                    c.name.clone(),
                    format!("{:e}", c.exact_margin),
                    c.sampled_margin.map_or(String::new(), |m| format!("{m:e}")),
                    c.violated.to_string(),
                    c.oracle_consistent.to_string(),
                ]
            })
            .collect()
    }
}

fn check(name: String, exact: f64, sampled: Option<f64>, scale: f64) -> ConstraintCheck {
    let violated = exact < -VALIDATION_MARGIN || sampled.is_some_and(|s| s < -VALIDATION_MARGIN);
    let oracle_consistent = sampled.is_none_or(|s| s >= exact - 1e-9 * scale.max(1e-12));
    ConstraintCheck { name, exact_margin: exact, sampled_margin: sampled, violated, oracle_consistent }
}

/// Re-checks interference caps, the SINR target and the energy-harvesting
/// thresholds of `w` against the exact worst case over every uncertainty
/// ball, plus `samples` random boundary draws per ball. `eh_thresholds[k]`
/// is the received-power requirement for receiver `k`, `None` if it carries
/// no EH constraint.
pub fn validate_solution(
    w: &HermitianMatrix,
    slacks: Option<&SlackValues>,
    inst: &NetworkInstance,
    eh_thresholds: &[Option<f64>],
    samples: usize,
    seed: u64,
) -> Result<ValidationReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    for (j, (e, &p_in)) in inst.e.iter().zip(&inst.p_in).enumerate() {
        let worst = worst_case_quadratic(w, &e.mean, e.radius, Sense::Max)?;
        let sampled = sampled_extreme(samples, |_| {
            let ej = perturb_with(&mut rng, e, true);
            p_in - quadratic_form(w, &ej).expect("dim")
        });
        checks.push(check(format!("interference[{j}]"), p_in - worst.value, sampled, p_in));
    }

    if inst.gamma_req > 0.0 {
        let signal = quadratic_form(w, &inst.h)? / inst.gamma_req;
        let worst = worst_case_quadratic(&inst.w_p, &inst.q_ps.mean, inst.q_ps.radius, Sense::Max)?;
        let sampled = sampled_extreme(samples, |_| {
            let q = perturb_with(&mut rng, &inst.q_ps, true);
            signal - inst.sigma_s2 - quadratic_form(&inst.w_p, &q).expect("dim")
        });
        checks.push(check("sinr".into(), signal - inst.sigma_s2 - worst.value, sampled, signal.max(worst.value)));
    }

    for (k, threshold) in eh_thresholds.iter().enumerate() {
        let Some(threshold) = *threshold else { continue };
        let g = &inst.g[k];
        let q = &inst.q_pe[k];
        let wg = worst_case_quadratic(w, &g.mean, g.radius, Sense::Min)?;
        let wq = worst_case_quadratic(&inst.w_p, &q.mean, q.radius, Sense::Min)?;
        let sampled = sampled_extreme(samples, |_| {
            let gk = perturb_with(&mut rng, g, true);
            let qk = perturb_with(&mut rng, q, true);
            quadratic_form(w, &gk).expect("dim") + quadratic_form(&inst.w_p, &qk).expect("dim") - threshold
        });
        checks.push(check(format!("eh[{k}]"), wg.value + wq.value - threshold, sampled, threshold));
    }

    let certificates = match slacks {
        Some(s) => certificate_eigenvalues(w, s, inst, eh_thresholds),
        None => Vec::new(),
    };
    Ok(ValidationReport { checks, certificates, samples })
}

fn sampled_extreme(samples: usize, mut margin: impl FnMut(usize) -> f64) -> Option<f64> {
    (samples > 0).then(|| (0..samples).map(&mut margin).fold(f64::INFINITY, f64::min))
}

fn certificate_eigenvalues(
    w: &HermitianMatrix,
    s: &SlackValues,
    inst: &NetworkInstance,
    eh_thresholds: &[Option<f64>],
) -> Vec<(String, f64)> {
    let wv = HermitianVar { offset: 0, dim: w.dim() };
    let mut x = vec![0.0; wv.len()];
    wv.pack(w, &mut x);
    let mut push = |v: f64| {
        x.push(v);
        VarIndex(x.len() - 1)
    };
    let mut blocks = Vec::new();
    for (j, (e, &p_in)) in inst.e.iter().zip(&inst.p_in).enumerate() {
        if e.radius > 0.0 {
            if let Some(&mu) = s.mu.get(j) {
                let mut b = lmi_interference(e, p_in, wv, push(mu));
                b.label = format!("interference[{j}]");
                blocks.push(b);
            }
        }
    }
    if let Some(varpi) = s.varpi_q {
        if inst.q_ps.radius > 0.0 {
            if let Some(b) = lmi_sinr(inst, wv, push(varpi)) {
                blocks.push(b);
            }
        }
    }
    for (k, threshold) in eh_thresholds.iter().enumerate() {
        let (Some(lambda), Some(Some(delta)), Some(Some(varpi)), Some(Some(beta))) =
            (threshold, s.delta.get(k), s.varpi_g.get(k), s.beta.get(k))
        else {
            continue;
        };
        let d = push(*delta);
        let mut b = lmi_eh_signal(&inst.g[k], *lambda, wv, d, push(*varpi));
        b.label = format!("eh_signal[{k}]");
        blocks.push(b);
        let mut b = lmi_eh_interference(&inst.q_pe[k], &inst.w_p, d, push(*beta));
        b.label = format!("eh_interference[{k}]");
        blocks.push(b);
    }
    blocks.iter().map(|b| (b.label.clone(), b.min_eigenvalue_at(&x))).collect()
}
