//! Latent factor designs: four unit-variance factor processes, strong or
//! weak loadings, homoskedastic or heteroskedastic idiosyncratic errors, and
//! treatment-effect designs D1-D9 for one or many treated units.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::rng::{substream, Stream};
use crate::error::{Error, Result};
use crate::panel::{MultiPanel, TimePanel};

/// Number of latent factors in every design.
pub const N_FACTORS: usize = 4;

/// Variance of the target's idiosyncratic error.
pub const SIGMA0_SQ: f64 = 0.5;

/// A stationary factor process with unit unconditional variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FactorProcess {
    Iid,
    /// `f_t = phi f_{t-1} + v_t`.
    Ar1 {
        phi: f64,
        innovation_var: f64,
    },
    /// `f_t = v_t + theta1 v_{t-1} + theta2 v_{t-2}`.
    Ma2 {
        theta: [f64; 2],
        innovation_var: f64,
    },
    /// `f_t = phi f_{t-1} + v_t + theta v_{t-1}`.
    Arma11 {
        phi: f64,
        theta: f64,
        innovation_var: f64,
    },
}

impl FactorProcess {
    pub fn unconditional_variance(&self) -> f64 {
        match *self {
            FactorProcess::Iid => 1.0,
            FactorProcess::Ar1 {
                phi,
                innovation_var,
            } => innovation_var / (1.0 - phi * phi),
            FactorProcess::Ma2 {
                theta,
                innovation_var,
            } => innovation_var * (1.0 + theta[0] * theta[0] + theta[1] * theta[1]),
            FactorProcess::Arma11 {
                phi,
                theta,
                innovation_var,
            } => innovation_var * (1.0 + theta * theta + 2.0 * phi * theta) / (1.0 - phi * phi),
        }
    }

    /// `t` draws started from the stationary distribution.
    pub fn simulate<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> Vec<f64> {
        let mut z = || -> f64 { rng.sample(StandardNormal) };
        let mut out = Vec::with_capacity(t);
        match *self {
            FactorProcess::Iid => out.extend((0..t).map(|_| z())),
            FactorProcess::Ar1 {
                phi,
                innovation_var,
            } => {
                let sv = innovation_var.sqrt();
                let mut f = self.unconditional_variance().sqrt() * z();
                for _ in 0..t {
                    f = phi * f + sv * z();
                    out.push(f);
                }
            }
            FactorProcess::Ma2 {
                theta,
                innovation_var,
            } => {
                let sv = innovation_var.sqrt();
                let (mut v2, mut v1) = (sv * z(), sv * z());
                for _ in 0..t {
                    let v = sv * z();
                    out.push(v + theta[0] * v1 + theta[1] * v2);
                    v2 = v1;
                    v1 = v;
                }
            }
            FactorProcess::Arma11 {
                phi,
                theta,
                innovation_var,
            } => {
                let sv = innovation_var.sqrt();
                let var = self.unconditional_variance();
                // (f_0, v_0) jointly stationary: cov(f_0, v_0) = innovation_var
                let mut v_prev = sv * z();
                let cond_var = var - innovation_var;
                let mut f = v_prev + cond_var.max(0.0).sqrt() * z();
                for _ in 0..t {
                    let v = sv * z();
                    f = phi * f + v + theta * v_prev;
                    out.push(f);
                    v_prev = v;
                }
            }
        }
        out
    }
}

/// The four factor processes: iid, AR(1), MA(2), ARMA(1,1).
pub const FACTOR_PROCESSES: [FactorProcess; N_FACTORS] = [
    FactorProcess::Iid,
    FactorProcess::Ar1 {
        phi: 0.9,
        innovation_var: 0.19,
    },
    FactorProcess::Ma2 {
        theta: [0.8, 0.4],
        innovation_var: 5.0 / 9.0,
    },
    FactorProcess::Arma11 {
        phi: 0.5,
        theta: 0.5,
        innovation_var: 3.0 / 7.0,
    },
];

/// `4 x t` factor matrix, one independent process per row.
pub fn gen_factors<R: Rng + ?Sized>(t: usize, rng: &mut R) -> DMatrix<f64> {
    let mut f = DMatrix::zeros(N_FACTORS, t);
    for (k, p) in FACTOR_PROCESSES.iter().enumerate() {
        for (s, v) in p.simulate(t, rng).into_iter().enumerate() {
            f[(k, s)] = v;
        }
    }
    f
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadingKind {
    Strong,
    Weak,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Homo,
    Mild,
    Severe,
}

impl ErrorKind {
    pub fn draw_variances<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        match self {
            ErrorKind::Homo => vec![0.5; n],
            ErrorKind::Mild => Uniform::new(0.3, 0.7).sample_iter(rng).take(n).collect(),
            ErrorKind::Severe => Uniform::new(0.1, 0.9).sample_iter(rng).take(n).collect(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ErrorKind::Homo => "homo",
            ErrorKind::Mild => "mild",
            ErrorKind::Severe => "severe",
        }
    }
}

impl LoadingKind {
    pub fn label(&self) -> &'static str {
        match self {
            LoadingKind::Strong => "strong",
            LoadingKind::Weak => "weak",
        }
    }
}

/// A draw from Uniform([-0.5, -0.3] u [0.3, 0.5]).
pub fn strong_loading<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let mag = rng.gen_range(0.3..0.5);
    if rng.gen::<bool>() {
        mag
    } else {
        -mag
    }
}

/// `n x 4` loading matrix. Weak designs keep the first four units strong and
/// draw the rest from Uniform(-0.15, 0.15).
pub fn draw_loadings<R: Rng + ?Sized>(kind: LoadingKind, n: usize, rng: &mut R) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, N_FACTORS);
    for i in 0..n {
        for k in 0..N_FACTORS {
            l[(i, k)] = match kind {
                LoadingKind::Weak if i >= N_FACTORS => rng.gen_range(-0.15..0.15),
                _ => strong_loading(rng),
            };
        }
    }
    l
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DgpSpec {
    pub loadings: LoadingKind,
    pub errors: ErrorKind,
}

impl DgpSpec {
    pub fn label(&self) -> String {
        format!("{}-{}", self.loadings.label(), self.errors.label())
    }
}

impl std::str::FromStr for DgpSpec {
    type Err = Error;

    /// Parses `strong-homo`, `weak-severe`, ...
    fn from_str(s: &str) -> Result<Self> {
        let (l, e) = s
            .split_once('-')
            .ok_or_else(|| Error::invalid(format!("bad dgp selector `{s}`")))?;
        let loadings = match l {
            "strong" => LoadingKind::Strong,
            "weak" => LoadingKind::Weak,
            _ => return Err(Error::invalid(format!("bad loading kind `{l}`"))),
        };
        let errors = match e {
            "homo" => ErrorKind::Homo,
            "mild" => ErrorKind::Mild,
            "severe" => ErrorKind::Severe,
            _ => return Err(Error::invalid(format!("bad error kind `{e}`"))),
        };
        Ok(Self { loadings, errors })
    }
}

/// Population quantities behind a simulated panel.
#[derive(Debug, Clone)]
pub struct FactorTruth {
    /// `N x q` control loadings.
    pub lambda: DMatrix<f64>,
    /// Target loadings (length `q`).
    pub lambda0: DVector<f64>,
    /// `q x T` factors.
    pub factors: DMatrix<f64>,
    /// Idiosyncratic variances of the controls (diagonal of Omega).
    pub omega_diag: Vec<f64>,
    pub sigma0_sq: f64,
    /// `N x T` control idiosyncratic errors.
    pub u: DMatrix<f64>,
}

impl FactorTruth {
    pub fn omega(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.omega_diag))
    }
}

/// A simulated single-target panel with its hidden truth.
#[derive(Debug, Clone)]
pub struct SimulatedPanel {
    pub panel: TimePanel,
    pub truth: FactorTruth,
}

fn normal_matrix<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    sds: &[f64],
    rng: &mut R,
) -> DMatrix<f64> {
    // column-major fill keeps the draw order period-by-period
    let mut m = DMatrix::zeros(rows, cols);
    for t in 0..cols {
        for i in 0..rows {
            let z: f64 = rng.sample(StandardNormal);
            m[(i, t)] = sds[i] * z;
        }
    }
    m
}

fn split_indices(t1: usize, t2: usize) -> (Vec<usize>, Vec<usize>) {
    ((0..t1).collect(), (t1..t1 + t2).collect())
}

/// Draws loadings, factors and errors for replication `rep` and assembles
/// `x_it = lambda_i' f_t + u_it`, `y_t = lambda_0' f_t + u_0t` over
/// `t1 + t2` periods (zero intercepts).
pub fn gen_panel(
    spec: DgpSpec,
    n: usize,
    t1: usize,
    t2: usize,
    seed: u64,
    rep: u64,
) -> Result<SimulatedPanel> {
    let t = t1 + t2;
    let mut rl = substream(seed, rep, Stream::Loadings);
    let lambda = draw_loadings(spec.loadings, n, &mut rl);
    let lambda0 =
        DVector::from_iterator(N_FACTORS, (0..N_FACTORS).map(|_| strong_loading(&mut rl)));
    let omega_diag = spec.errors.draw_variances(n, &mut rl);

    let factors = gen_factors(t, &mut substream(seed, rep, Stream::Factors));
    let mut re = substream(seed, rep, Stream::Idiosyncratic);
    let sds: Vec<f64> = omega_diag.iter().map(|v| v.sqrt()).collect();
    let u = normal_matrix(n, t, &sds, &mut re);
    let u0 = normal_matrix(1, t, &[SIGMA0_SQ.sqrt()], &mut re);

    let x = &lambda * &factors + &u;
    let y = (lambda0.transpose() * &factors + u0).transpose();
    let (train, eval) = split_indices(t1, t2);
    let panel = TimePanel::new(y, x, train, eval)?;
    Ok(SimulatedPanel {
        panel,
        truth: FactorTruth {
            lambda,
            lambda0,
            factors,
            omega_diag,
            sigma0_sq: SIGMA0_SQ,
            u,
        },
    })
}

/// Simulated panel with many treated units (strong loadings, homoskedastic
/// N(0, 0.5) errors for the treated) sharing controls drawn per `spec`.
#[derive(Debug, Clone)]
pub struct SimulatedMultiPanel {
    pub panel: MultiPanel,
    pub truth: FactorTruth,
    /// `M x q` treated-unit loadings.
    pub treated_loadings: DMatrix<f64>,
}

pub fn gen_multi_panel(
    spec: DgpSpec,
    n: usize,
    m: usize,
    t1: usize,
    t2: usize,
    seed: u64,
    rep: u64,
) -> Result<SimulatedMultiPanel> {
    let t = t1 + t2;
    let mut rl = substream(seed, rep, Stream::Loadings);
    let lambda = draw_loadings(spec.loadings, n, &mut rl);
    let treated_loadings = draw_loadings(LoadingKind::Strong, m, &mut rl);
    let omega_diag = spec.errors.draw_variances(n, &mut rl);

    let factors = gen_factors(t, &mut substream(seed, rep, Stream::Factors));
    let mut re = substream(seed, rep, Stream::Idiosyncratic);
    let sds: Vec<f64> = omega_diag.iter().map(|v| v.sqrt()).collect();
    let u = normal_matrix(n, t, &sds, &mut re);
    let um = normal_matrix(m, t, &vec![SIGMA0_SQ.sqrt(); m], &mut re);

    let x = &lambda * &factors + &u;
    let y = &treated_loadings * &factors + um;
    let (train, eval) = split_indices(t1, t2);
    let panel = MultiPanel::new(y, x, train, eval)?;
    Ok(SimulatedMultiPanel {
        panel,
        truth: FactorTruth {
            lambda,
            lambda0: DVector::zeros(N_FACTORS),
            factors,
            omega_diag,
            sigma0_sq: SIGMA0_SQ,
            u,
        },
        treated_loadings,
    })
}

/// Treatment-effect designs. D1-D3 satisfy the zero-ATE null; D4-D6 add 0.3
/// and D7-D9 add 0.5 to D1-D3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Design {
    D1,
    D2,
    D3,
    D4,
    D5,
    D6,
    D7,
    D8,
    D9,
}

impl Design {
    pub const ALL: [Design; 9] = [
        Design::D1,
        Design::D2,
        Design::D3,
        Design::D4,
        Design::D5,
        Design::D6,
        Design::D7,
        Design::D8,
        Design::D9,
    ];

    pub fn index(&self) -> usize {
        *self as usize
    }

    pub fn shift(&self) -> f64 {
        match self.index() / 3 {
            0 => 0.0,
            1 => 0.3,
            _ => 0.5,
        }
    }

    /// Which of the three random components (zero, iid, dependent) applies.
    pub fn base(&self) -> usize {
        self.index() % 3
    }

    pub fn is_null(&self) -> bool {
        self.shift() == 0.0
    }

    pub fn label(&self) -> String {
        format!("D{}", self.index() + 1)
    }
}

impl std::str::FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let k: usize = s
            .trim()
            .trim_start_matches(['D', 'd'])
            .parse()
            .map_err(|_| Error::invalid(format!("bad design `{s}`")))?;
        Design::ALL
            .get(k.wrapping_sub(1))
            .copied()
            .ok_or_else(|| Error::invalid(format!("bad design `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreatmentSetting {
    Single,
    Multi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreatmentSpec {
    pub setting: TreatmentSetting,
    pub design: Design,
}

/// Chain weights `(a, b)` with `a^2 + b^2 = 1` and `a b = 0.3`, so
/// `a nu_i + b nu_{i+1}` keeps the variance of `nu` and has correlation 0.3
/// between neighbouring units.
pub fn chain_weights() -> (f64, f64) {
    (0.9_f64.sqrt(), 0.1_f64.sqrt())
}

/// Effects for all three random bases at once: `len` periods (single) or
/// `len` units (multi). Returns `[zero, iid, dependent]`, each without the
/// design shift.
pub fn gen_effect_bases<R: Rng + ?Sized>(
    setting: TreatmentSetting,
    len: usize,
    rng: &mut R,
) -> [Vec<f64>; 3] {
    match setting {
        TreatmentSetting::Single => {
            let iid: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
            let innov = Normal::new(0.0, 0.91_f64.sqrt()).expect("valid sd");
            let mut prev: f64 = rng.sample(StandardNormal);
            let ar: Vec<f64> = (0..len)
                .map(|_| {
                    prev = 0.3 * prev + innov.sample(rng);
                    prev
                })
                .collect();
            [vec![0.0; len], iid, ar]
        }
        TreatmentSetting::Multi => {
            let sd = (len as f64).powf(-0.75);
            let nu: Vec<f64> = (0..=len)
                .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let (a, b) = chain_weights();
            let chain: Vec<f64> = (0..len).map(|i| a * nu[i] + b * nu[i + 1]).collect();
            [vec![0.0; len], nu[..len].to_vec(), chain]
        }
    }
}

/// Effect series (single unit, length `T2`) or cross-section (multi, length
/// `M`) for one design.
pub fn gen_treatment<R: Rng + ?Sized>(spec: TreatmentSpec, len: usize, rng: &mut R) -> Vec<f64> {
    let bases = gen_effect_bases(spec.setting, len, rng);
    let shift = spec.design.shift();
    bases[spec.design.base()]
        .iter()
        .map(|v| v + shift)
        .collect()
}
