//! Interior-point solvers, the low-rank ε-path, the η-path for combined
//! problems, KKT verification and design recovery.

pub mod bm;
pub mod cone;
pub mod design;
pub mod eta;
pub mod kkt;
pub mod lowrank;
pub mod sdp;
pub mod socp;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::model::{KktResiduals, PackingProblem, Solution, Status};
use cone::ConicSettings;

pub use design::{recover_design, solve_design, DesignReport, RecoveryMode};
pub use eta::{solve_combined_eta, EtaOutcome};
pub use kkt::{complete_dual, kkt_check, KktReport};
pub use lowrank::solve_packing_lowrank;
pub use sdp::{solve_sdp, solve_sdp_dense};
pub use socp::{solve_combined_socp, solve_socp, SocpResult};

fn geometric(from: f64, to: f64, points: usize) -> Vec<f64> {
    let ratio = (to / from).powf(1.0 / (points - 1) as f64);
    (0..points).map(|k| if k + 1 == points { to } else { from * ratio.powi(k as i32) }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Duality-gap target.
    pub tol: f64,
    pub max_iter: usize,
    /// Decreasing perturbations `ε` for the low-rank path.
    pub eps_schedule: Vec<f64>,
    /// Decreasing trace caps `η` for combined problems.
    pub eta_schedule: Vec<f64>,
    /// Relative eigenvalue cutoff used when reading off the rank of a solution.
    pub rank_threshold: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-8,
            max_iter: 200,
            eps_schedule: geometric(1e-2, 1e-8, 7),
            eta_schedule: geometric(1.0, 1e-6, 7),
            rank_threshold: 1e-6,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidInput(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.rank_threshold > 0.0 && self.rank_threshold < 1.0) {
            return Err(Error::InvalidInput("rank_threshold must lie in (0, 1)".into()));
        }
        for (name, s) in [("eps_schedule", &self.eps_schedule), ("eta_schedule", &self.eta_schedule)] {
            if s.is_empty() || s.iter().any(|&v| !(v > 0.0 && v.is_finite())) || s.windows(2).any(|w| w[1] >= w[0]) {
                return Err(Error::InvalidInput(format!("{name} must be positive and strictly decreasing")));
            }
        }
        Ok(())
    }

    /// Interior-point settings for a target gap.
    pub(crate) fn conic(&self, tol: f64) -> ConicSettings {
        ConicSettings { max_iter: self.max_iter, feastol: tol, abstol: tol, reltol: tol }
    }

    /// Settings for the final answer: a tenth of the requested gap.
    pub(crate) fn conic_default(&self) -> ConicSettings {
        self.conic((self.tol * 0.1).max(1e-13))
    }

    /// Settings for path solves, which need values accurate well below the
    /// monotonicity tolerance.
    pub(crate) fn conic_path(&self) -> ConicSettings {
        self.conic(1e-10_f64.min(self.tol * 1e-2))
    }
}

/// Solver selection for packing problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    /// Cone program when `rank C = 1`, `ε`-path otherwise.
    Auto,
    Socp,
    EpsPath,
    /// Factorized `X = RRᵀ`; never certified without a passing KKT check.
    Bm,
}

impl std::str::FromStr for Route {
    type Err = Error;

    fn from_str(s: &str) -> Result<Route> {
        match s {
            "auto" => Ok(Route::Auto),
            "socp" => Ok(Route::Socp),
            "eps-path" => Ok(Route::EpsPath),
            "bm" => Ok(Route::Bm),
            other => Err(Error::InvalidInput(format!("unknown route {other:?}"))),
        }
    }
}

/// Solves a packing problem along `route`.
pub fn solve_packing(p: &PackingProblem, opts: &SolveOptions, route: Route) -> Result<Solved> {
    match route {
        Route::Auto => lowrank::solve_packing_routed(p, opts, None),
        Route::Socp => lowrank::solve_packing_routed(p, opts, Some(true)),
        Route::EpsPath => lowrank::solve_packing_routed(p, opts, Some(false)),
        Route::Bm => bm::solve_bm(p, opts, None),
    }
}

/// `Optimal` when the KKT residuals are within `10 · tol · scale`, otherwise
/// `NonCertified`.
pub(crate) fn certified_status(p: &PackingProblem, x: &SymMatrix, mu: &[f64], opts: &SolveOptions) -> Status {
    if kkt::kkt_check(p, x, mu, 10.0 * opts.tol).pass {
        Status::Optimal
    } else {
        Status::NonCertified
    }
}

/// Values along a perturbation path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathReport {
    /// `ε` or `η`, in schedule order.
    pub parameters: Vec<f64>,
    pub values: Vec<f64>,
    pub ranks: Vec<usize>,
    /// Difference of the last two values.
    pub convergence_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub route: String,
    pub primal_value: f64,
    pub dual_value: f64,
    pub gap: f64,
    pub iterations: usize,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kkt: Option<KktResiduals>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathReport>,
}

/// A solution together with how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct Solved {
    pub solution: Solution,
    pub report: SolveReport,
}
