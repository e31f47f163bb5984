//! Monte Carlo designs and experiments for latent factor panels.

pub mod dgp;
pub mod experiment;
pub mod oracle;
pub mod rng;

pub use dgp::{
    gen_factors, gen_multi_panel, gen_panel, gen_treatment, Design, DgpSpec, ErrorKind,
    FactorTruth, LoadingKind, SimulatedMultiPanel, SimulatedPanel, TreatmentSetting, TreatmentSpec,
    SIGMA0_SQ,
};
pub use experiment::{
    run_mpse_experiment, run_size_power_experiment, McConfig, ReportRow, SimReport,
};
pub use oracle::{
    factor_strength, oracle_beta0, oracle_beta0_woodbury, oracle_beta_star, oracle_mse,
};
