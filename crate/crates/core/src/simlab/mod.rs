//! Data-generating processes, the Monte Carlo harness, and the
//! generalized variance-decomposition connectedness measure.

mod decomp;
mod dgp;
mod mc;

pub use decomp::{variance_decomposition, DecompositionStep};
pub use dgp::{
    gen_lp, gen_mgarch, gen_var1, synthetic_shock, DgpCase, LpConfig, LpDesign, MgarchConfig,
    MgarchDesign, Var1Config, Var1Design, BURN_IN,
};
pub use mc::{
    first_active_index, run_monte_carlo, CoverageSummary, EstimatorSpec, InitMode, MethodSummary,
    MonteCarloReport, RepRecord,
};

use serde::{Deserialize, Serialize};

/// Experiment family with its family-specific parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum DgpConfig {
    Var1(Var1Config),
    Lp(LpConfig),
    Mgarch(MgarchConfig),
}
