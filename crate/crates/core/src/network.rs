//! Scenario construction: estimated channels with uncertainty balls, the
//! primary base station's fixed transmit covariance, and the power budget.
//!
//! Internally every power is in watts. dBm and dB only appear in
//! [`PowerLevels`] and the config file.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{ComplexVector, HermitianMatrix, C64};

pub fn dbm_to_watt(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watt_to_dbm(watt: f64) -> Result<f64> {
    if !(watt > 0.0) {
        return Err(Error::OutOfRange { what: "power for dBm conversion", value: watt });
    }
    Ok(10.0 * watt.log10() + 30.0)
}

/// `10^(db/10)`; `-inf` maps to 0.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Estimated channel and the radius of the ball containing the true one.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelEstimate {
    pub mean: ComplexVector,
    pub radius: f64,
}

impl ChannelEstimate {
    pub fn new(mean: ComplexVector, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::OutOfRange { what: "uncertainty radius", value: radius });
        }
        Ok(Self { mean, radius })
    }

    pub fn exact(mean: ComplexVector) -> Self {
        Self { mean, radius: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkInstance {
    pub n_t: usize,
    pub n_p: usize,
    /// Secondary-user channel, known exactly.
    pub h: ComplexVector,
    /// CBS -> energy receivers.
    pub g: Vec<ChannelEstimate>,
    /// CBS -> primary users.
    pub e: Vec<ChannelEstimate>,
    /// PBS -> secondary user.
    pub q_ps: ChannelEstimate,
    /// PBS -> energy receivers.
    pub q_pe: Vec<ChannelEstimate>,
    /// PBS transmit covariance (W).
    pub w_p: HermitianMatrix,
    pub sigma_s2: f64,
    pub p_in: Vec<f64>,
    pub p_max: f64,
    /// Linear SINR target; zero disables the SINR constraint.
    pub gamma_req: f64,
}

impl NetworkInstance {
    pub fn validate(&self) -> Result<()> {
        let dim = |v: usize, want: usize| {
            if v == want {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { expected: want, found: v })
            }
        };
        if self.n_t == 0 || self.n_p == 0 {
            return Err(Error::Config("antenna counts must be positive".into()));
        }
        if self.g.is_empty() || self.e.is_empty() {
            return Err(Error::Config("need at least one energy receiver and one primary user".into()));
        }
        if self.q_pe.len() != self.g.len() {
            return Err(Error::DimensionMismatch { expected: self.g.len(), found: self.q_pe.len() });
        }
        if self.p_in.len() != self.e.len() {
            return Err(Error::DimensionMismatch { expected: self.e.len(), found: self.p_in.len() });
        }
        dim(self.h.dim(), self.n_t)?;
        for g in &self.g {
            dim(g.dim(), self.n_t)?;
        }
        for e in &self.e {
            dim(e.dim(), self.n_t)?;
        }
        dim(self.q_ps.dim(), self.n_p)?;
        for q in &self.q_pe {
            dim(q.dim(), self.n_p)?;
        }
        dim(self.w_p.dim(), self.n_p)?;
        let min_eig = self.w_p.min_eigenvalue();
        if min_eig < -1e-12 * self.w_p.max_abs().max(f64::MIN_POSITIVE) {
            return Err(Error::NotPsd { min_eigenvalue: min_eig });
        }
        for (what, v) in [("sigma_s2", self.sigma_s2), ("p_max", self.p_max)]
            .into_iter()
            .chain(self.p_in.iter().map(|&p| ("p_in", p)))
        {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::OutOfRange { what, value: v });
            }
        }
        if !(self.gamma_req >= 0.0) || !self.gamma_req.is_finite() {
            return Err(Error::OutOfRange { what: "gamma_req", value: self.gamma_req });
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.g.len()
    }

    pub fn j(&self) -> usize {
        self.e.len()
    }

    /// Same channels with every uncertainty radius set to zero.
    pub fn perfect_csi(&self) -> NetworkInstance {
        let zero = |c: &ChannelEstimate| ChannelEstimate::exact(c.mean.clone());
        NetworkInstance {
            g: self.g.iter().map(zero).collect(),
            e: self.e.iter().map(zero).collect(),
            q_ps: zero(&self.q_ps),
            q_pe: self.q_pe.iter().map(zero).collect(),
            ..self.clone()
        }
    }

    pub fn is_perfect_csi(&self) -> bool {
        self.g.iter().chain(&self.e).chain(&self.q_pe).chain(std::iter::once(&self.q_ps)).all(|c| c.radius == 0.0)
    }

    pub fn with_gamma(&self, gamma_req: f64) -> NetworkInstance {
        NetworkInstance { gamma_req, ..self.clone() }
    }

    /// SHA-256 over every channel entry and scalar, used to confirm that
    /// paired runs saw the same draw. Radii are excluded so a robust run and
    /// its perfect-CSI twin hash identically.
    pub fn channel_digest(&self) -> String {
        let mut hasher = Sha256::new();
        let mut feed = |v: &ComplexVector| {
            for z in v.entries() {
                hasher.update(z.re.to_le_bytes());
                hasher.update(z.im.to_le_bytes());
            }
        };
        feed(&self.h);
        for c in self.g.iter().chain(&self.e).chain(&self.q_pe) {
            feed(&c.mean);
        }
        feed(&self.q_ps.mean);
        for z in self.w_p.as_matrix().iter() {
            hasher.update(z.re.to_le_bytes());
            hasher.update(z.im.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

/// Per-entry variances of the estimated channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelVariances {
    pub su: f64,
    pub ehr: f64,
    pub pu: f64,
    pub pbs_su: f64,
    pub pbs_ehr: f64,
}

impl Default for ChannelVariances {
    fn default() -> Self {
        Self { su: 1.0, ehr: 0.5, pu: 1.0, pbs_su: 1.0, pbs_ehr: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UncertaintyRadii {
    pub g: f64,
    pub e: f64,
    pub ps: f64,
    pub pe: f64,
}

impl Default for UncertaintyRadii {
    fn default() -> Self {
        Self { g: 0.002, e: 0.005, ps: 0.005, pe: 0.001 }
    }
}

impl UncertaintyRadii {
    pub fn zero() -> Self {
        Self { g: 0.0, e: 0.0, ps: 0.0, pe: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub variances: ChannelVariances,
    pub radii: UncertaintyRadii,
    /// Total PBS transmit power, split equally over its beamformers (W).
    pub pbs_power: f64,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            variances: ChannelVariances::default(),
            radii: UncertaintyRadii::default(),
            pbs_power: dbm_to_watt(10.0),
            seed: 1,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        let v = &self.variances;
        for (what, x) in [
            ("variance su", v.su),
            ("variance ehr", v.ehr),
            ("variance pu", v.pu),
            ("variance pbs_su", v.pbs_su),
            ("variance pbs_ehr", v.pbs_ehr),
        ] {
            if !(x > 0.0) {
                return Err(Error::OutOfRange { what, value: x });
            }
        }
        let r = &self.radii;
        for (what, x) in [("radius g", r.g), ("radius e", r.e), ("radius ps", r.ps), ("radius pe", r.pe)] {
            if !(x >= 0.0) {
                return Err(Error::OutOfRange { what, value: x });
            }
        }
        if !(self.pbs_power >= 0.0) {
            return Err(Error::OutOfRange { what: "pbs_power", value: self.pbs_power });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Counts {
    pub n_t: usize,
    pub n_p: usize,
    pub k: usize,
    pub j: usize,
}

impl Default for Counts {
    fn default() -> Self {
        Self { n_t: 3, n_p: 3, k: 2, j: 2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerLevels {
    pub p_in_dbm: f64,
    pub p_max_dbm: f64,
    pub sigma2_dbm: f64,
    /// SINR target in dB; `-inf` disables the constraint.
    pub gamma_db: f64,
}

impl Default for PowerLevels {
    fn default() -> Self {
        Self { p_in_dbm: 10.0, p_max_dbm: 20.0, sigma2_dbm: -120.0, gamma_db: 10.0 }
    }
}

/// Circularly-symmetric complex Gaussian vector with per-entry variance `var`.
fn complex_gaussian(rng: &mut impl Rng, n: usize, var: f64) -> ComplexVector {
    let s = (var / 2.0).sqrt();
    let entries = (0..n)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(s * re, s * im)
        })
        .collect();
    ComplexVector::from_dvector(DVector::from_vec(entries)).expect("finite gaussian draw")
}

fn unit_direction(rng: &mut impl Rng, n: usize) -> ComplexVector {
    loop {
        let v = complex_gaussian(rng, n, 1.0);
        let norm = v.norm();
        if norm > 1e-300 {
            return v.scaled(1.0 / norm);
        }
    }
}

/// Draws one scenario. Draw order is fixed (h, g, e, q_ps, q_pe, PBS
/// beamformers), so the same seed always yields the same instance.
pub fn sample_instance(cfg: &GenerationConfig, counts: Counts, powers: PowerLevels) -> Result<NetworkInstance> {
    cfg.validate()?;
    if counts.n_t == 0 || counts.n_p == 0 || counts.k == 0 || counts.j == 0 {
        return Err(Error::Config(format!("all counts must be positive, got {counts:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let v = &cfg.variances;
    let r = &cfg.radii;
    let h = complex_gaussian(&mut rng, counts.n_t, v.su);
    let g = (0..counts.k)
        .map(|_| ChannelEstimate::new(complex_gaussian(&mut rng, counts.n_t, v.ehr), r.g))
        .collect::<Result<Vec<_>>>()?;
    let e = (0..counts.j)
        .map(|_| ChannelEstimate::new(complex_gaussian(&mut rng, counts.n_t, v.pu), r.e))
        .collect::<Result<Vec<_>>>()?;
    let q_ps = ChannelEstimate::new(complex_gaussian(&mut rng, counts.n_p, v.pbs_su), r.ps)?;
    let q_pe = (0..counts.k)
        .map(|_| ChannelEstimate::new(complex_gaussian(&mut rng, counts.n_p, v.pbs_ehr), r.pe))
        .collect::<Result<Vec<_>>>()?;

    let per_beam = cfg.pbs_power / counts.j as f64;
    let mut w_p = HermitianMatrix::zeros(counts.n_p);
    for _ in 0..counts.j {
        let u = unit_direction(&mut rng, counts.n_p);
        w_p.axpy(per_beam, &HermitianMatrix::outer(&u));
    }

    let inst = NetworkInstance {
        n_t: counts.n_t,
        n_p: counts.n_p,
        h,
        g,
        e,
        q_ps,
        q_pe,
        w_p,
        sigma_s2: dbm_to_watt(powers.sigma2_dbm),
        p_in: vec![dbm_to_watt(powers.p_in_dbm); counts.j],
        p_max: dbm_to_watt(powers.p_max_dbm),
        gamma_req: db_to_linear(powers.gamma_db),
    };
    inst.validate()?;
    Ok(inst)
}

/// `est.mean + delta` with `|delta| <= radius`, drawn from `rng`. Interior
/// draws are uniform in the ball; boundary draws uniform on the sphere.
pub fn perturb_with(rng: &mut impl Rng, est: &ChannelEstimate, on_boundary: bool) -> ComplexVector {
    if est.radius == 0.0 {
        return est.mean.clone();
    }
    let n = est.dim();
    let dir = unit_direction(rng, n);
    let r = if on_boundary {
        est.radius
    } else {
        // uniform in the real 2n-ball
        let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        est.radius * u.powf(1.0 / (2 * n) as f64)
    };
    est.mean.add(&dir.scaled(r)).expect("same dimension")
}

pub fn sample_perturbation(est: &ChannelEstimate, seed: u64, on_boundary: bool) -> ComplexVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perturb_with(&mut rng, est, on_boundary)
}
