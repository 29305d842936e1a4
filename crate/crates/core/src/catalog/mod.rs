//! Parameterized constructors for the benchmark systems, each returning a
//! fully populated [`SystemSpec`] plus closed-form reference quantities and
//! expected hypothesis-check outcomes for regression.

mod ball;
mod counterexamples;
mod oscillator;
mod snakeboard;
mod so3;
mod solid;

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::dynamics::State;
use crate::error::{Error, Result};
use crate::geometry::ChartPoint;
use crate::momentum::ShapeGrid;
use crate::system::SystemSpec;

pub use ball::{ball_on_surface, BallParams};
pub use counterexamples::{
    multidim_particle, multidim_particle_config, r3se2_counterexample, MultidimConfig,
    MultidimParams,
};
pub use oscillator::{oscillator, OscillatorParams};
pub use snakeboard::{snakeboard, SnakeboardParams};
pub use solid::{solid_of_revolution, SolidParams};

/// Polynomial in one variable, ascending coefficients. The only function
/// format accepted from parameter files.
#[derive(Clone, Debug, Deserialize)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    pub fn constant(c: f64) -> Self {
        Poly(vec![c])
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Poly {
        if self.0.len() <= 1 {
            return Poly(vec![0.0]);
        }
        Poly(self.0.iter().enumerate().skip(1).map(|(i, &c)| c * i as f64).collect())
    }
}

type MatrixRef = Arc<dyn Fn(&ChartPoint) -> DMatrix<f64> + Send + Sync>;
type FrameTwoFormRef = Arc<dyn Fn(&SystemSpec, &State) -> DMatrix<f64> + Send + Sync>;
type ReducedBivectorRef = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
type CoeffDirectionsRef = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

/// Closed-form reference evaluators where the source text supplies them.
#[derive(Clone, Default)]
pub struct References {
    pub kappa_s: Option<MatrixRef>,
    pub n_matrix: Option<MatrixRef>,
    pub r_matrix: Option<MatrixRef>,
    /// Columns span the expected momentum-coefficient directions at a shape
    /// value (defined up to per-column scale).
    pub momentum_directions: Option<CoeffDirectionsRef>,
    /// Gauge 2-form evaluated on the constraint frame, as the full
    /// antisymmetric (2k+2) x (2k+2) matrix at a state.
    pub b_hgs_frame: Option<FrameTwoFormRef>,
    /// Reduced bivector at a reduced point (s, p0, p1..pk).
    pub pi_red: Option<ReducedBivectorRef>,
}

/// A catalog system: spec, references, expectations,默认 run setup.
#[derive(Clone)]
pub struct CatalogEntry {
    pub spec: SystemSpec,
    pub references: References,
    /// check_id -> expected pass?
    pub expected_checks: BTreeMap<String, bool>,
    pub default_grid: ShapeGrid,
    pub default_state: State,
    /// Number of independent conserved momenta the system should produce.
    pub expected_momentum_count: usize,
    /// Whether the constrained solver is the intended route.
    pub needs_constrained_solver: bool,
}

pub fn expected_all_pass() -> BTreeMap<String, bool> {
    [
        ("dimension_assumption", true),
        ("s_orthogonality", true),
        ("strong_invariance", true),
        ("x0_condition", true),
        ("frame_invariance", true),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Construct a catalog system by name with optional JSON parameters.
pub fn by_name(name: &str, params: Option<&serde_json::Value>) -> Result<CatalogEntry> {
    fn parse<T: for<'de> Deserialize<'de> + Default>(v: Option<&serde_json::Value>) -> Result<T> {
        match v {
            None => Ok(T::default()),
            Some(val) => serde_json::from_value(val.clone())
                .map_err(|e| Error::BadParameter(format!("params: {e}"))),
        }
    }
    match name {
        "oscillator" => oscillator(parse::<OscillatorParams>(params)?),
        "snakeboard" => snakeboard(parse::<SnakeboardParams>(params)?),
        "solid" | "solid_of_revolution" => solid_of_revolution(parse::<SolidParams>(params)?),
        "ball" | "ball_on_surface" => ball_on_surface(parse::<BallParams>(params)?),
        "counterexample_r3se2" => r3se2_counterexample(),
        "multidim_a" => multidim_particle_config(MultidimConfig::OneMomentum),
        "multidim_b" => multidim_particle_config(MultidimConfig::ZeroMomenta),
        "multidim_c" => multidim_particle_config(MultidimConfig::TwoMomenta),
        other => Err(Error::BadParameter(format!("unknown system `{other}`"))),
    }
}

pub fn known_systems() -> &'static [&'static str] {
    &[
        "oscillator",
        "snakeboard",
        "solid",
        "ball",
        "counterexample_r3se2",
        "multidim_a",
        "multidim_b",
        "multidim_c",
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_eval_and_derivative() {
        let p = Poly(vec![1.0, 0.0, 0.5]); // 1 + 0.5 x^2
        assert_eq!(p.eval(2.0), 3.0);
        let dp = p.derivative();
        assert_eq!(dp.eval(2.0), 2.0);
        assert_eq!(dp.derivative().eval(7.0), 1.0);
    }

    #[test]
    fn unknown_system_is_rejected() {
        assert!(by_name("tippe_top", None).is_err());
    }
}
