//! Run configuration: flat `section.key = value` text, defaulted and validated.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::EmConfig;
use crate::grid::{build_receivers_for, GridSpec, PmlProfile, ReceiverSet, Rect};
use crate::inversion::{ContinuationSchedule, NuRule, StepControl, StepScaling};
use crate::learning::{ExampleSpec, Family};
use crate::regularizer::RegularizerConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    /// Nodes per side of the inversion grid.
    pub coarse: usize,
    /// Nodes per side of the grid the error model is learned against.
    pub fine: usize,
    /// Nodes per side of the grid that synthesizes measurements.
    pub reference: usize,
    pub omega_x_min: f64,
    pub omega_x_max: f64,
    pub omega_y_min: f64,
    pub omega_y_max: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            coarse: 129,
            fine: 433,
            reference: 641,
            omega_x_min: -1.0,
            omega_x_max: 1.0,
            omega_y_min: -1.0,
            omega_y_max: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PmlSection {
    pub sigma0: f64,
    pub p: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Default for PmlSection {
    fn default() -> Self {
        let p = PmlProfile::default();
        Self {
            sigma0: p.sigma0,
            p: p.p,
            d1: p.d1,
            d2: p.d2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReceiverSection {
    pub count: usize,
    pub radius: f64,
}

impl Default for ReceiverSection {
    fn default() -> Self {
        Self {
            count: 400,
            radius: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationSection {
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub count: usize,
    /// Number of equally spaced incident angles.
    pub angles: usize,
}

impl Default for ContinuationSection {
    fn default() -> Self {
        Self {
            kappa_min: PI,
            kappa_max: 10.0 * PI,
            count: 10,
            angles: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub sigma: f64,
    /// Absolute noise variance; overrides `nu_rel` when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    /// `nu = nu_rel * mean |d|^2` per wavenumber.
    pub nu_rel: f64,
    pub seed: u64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            sigma: 0.02,
            nu: None,
            nu_rel: 1e-6,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureSection {
    pub k: usize,
    /// Absolute M-step regularization; overrides `delta_rel` when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// `delta = delta_rel * trace(pooled covariance) / N_d`.
    pub delta_rel: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub max_restarts: usize,
}

impl Default for MixtureSection {
    fn default() -> Self {
        Self {
            k: 4,
            delta: None,
            delta_rel: 1e-6,
            tol: 1e-8,
            max_iter: 500,
            seed: 7,
            max_restarts: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegSection {
    pub a_scale: f64,
    pub s: f64,
    pub lambda: f64,
    pub delta_tv: f64,
    pub weight: f64,
}

impl Default for RegSection {
    fn default() -> Self {
        let r = RegularizerConfig::default();
        Self {
            a_scale: r.a_scale,
            s: r.s,
            lambda: r.lambda,
            delta_tv: r.delta_tv,
            weight: r.weight,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepSection {
    pub init: f64,
    pub factor: f64,
    pub max_backtracks: usize,
    /// `gauss_newton` or `fixed`.
    pub scaling: String,
}

impl Default for StepSection {
    fn default() -> Self {
        Self {
            init: 1.0,
            factor: 0.5,
            max_backtracks: 20,
            scaling: "gauss_newton".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsSection {
    pub q_min: f64,
    pub q_max: f64,
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self {
            q_min: -0.99,
            q_max: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningSection {
    pub family: String,
    pub count: usize,
    pub seed: u64,
    /// Pool the errors of every incident angle into one set per wavenumber.
    pub pool_angles: bool,
    /// Training angle when angles are not pooled.
    pub angle: f64,
}

impl Default for LearningSection {
    fn default() -> Self {
        Self {
            family: "gaussian_bumps".into(),
            count: 200,
            seed: 1,
            pool_angles: false,
            angle: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub tol: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self { tol: 1e-10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthSection {
    /// `example1`, `example2` or `none`.
    pub example: String,
}

impl Default for TruthSection {
    fn default() -> Self {
        Self {
            example: "example1".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionConfig {
    pub grid: GridSection,
    pub pml: PmlSection,
    pub receivers: ReceiverSection,
    pub continuation: ContinuationSection,
    pub noise: NoiseSection,
    pub mixture: MixtureSection,
    pub reg: RegSection,
    pub step: StepSection,
    pub bounds: BoundsSection,
    pub learning: LearningSection,
    pub solver: SolverSection,
    pub truth: TruthSection,
}

/// Which analytic scatterer the data are synthesized from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TruthExample {
    Example1,
    Example2,
    None,
}

fn bad(key: &'static str, reason: impl Into<String>) -> Error {
    Error::Config(format!("`{key}`: {}", reason.into()))
}

fn positive(key: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(key, format!("must be > 0, got {v}")))
    }
}

fn non_negative(key: &'static str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(key, format!("must be >= 0, got {v}")))
    }
}

/// Maps a module-level parameter error onto the configuration key it came from.
fn as_config(e: Error) -> Error {
    match e {
        Error::Parameter { name, reason } => Error::Config(format!("`{name}`: {reason}")),
        Error::Geometry(m) => Error::Config(m),
        other => other,
    }
}

impl InversionConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        for (key, n) in [
            ("grid.coarse", g.coarse),
            ("grid.fine", g.fine),
            ("grid.reference", g.reference),
        ] {
            if n < 3 {
                return Err(bad(key, format!("must be >= 3, got {n}")));
            }
        }
        if !(g.omega_x_min < g.omega_x_max) {
            return Err(bad("grid.omega_x_max", "must exceed grid.omega_x_min"));
        }
        if !(g.omega_y_min < g.omega_y_max) {
            return Err(bad("grid.omega_y_max", "must exceed grid.omega_y_min"));
        }
        self.pml_profile().validate().map_err(as_config)?;
        if self.receivers.count == 0 {
            return Err(bad("receivers.count", "must be >= 1"));
        }
        positive("receivers.radius", self.receivers.radius)?;
        let c = &self.continuation;
        positive("continuation.kappa_min", c.kappa_min)?;
        if c.count > 1 && !(c.kappa_max > c.kappa_min) {
            return Err(bad("continuation.kappa_max", "must exceed continuation.kappa_min"));
        }
        if c.count == 0 {
            return Err(bad("continuation.count", "must be >= 1"));
        }
        if c.angles == 0 {
            return Err(bad("continuation.angles", "must be >= 1"));
        }
        for (key, seed) in [
            ("noise.seed", self.noise.seed),
            ("mixture.seed", self.mixture.seed),
            ("learning.seed", self.learning.seed),
        ] {
            if seed > i64::MAX as u64 {
                return Err(bad(key, format!("must be <= {}, got {seed}", i64::MAX)));
            }
        }
        non_negative("noise.sigma", self.noise.sigma)?;
        if let Some(nu) = self.noise.nu {
            non_negative("noise.nu", nu)?;
        }
        non_negative("noise.nu_rel", self.noise.nu_rel)?;
        let m = &self.mixture;
        if m.k == 0 {
            return Err(bad("mixture.k", "must be >= 1"));
        }
        if let Some(d) = m.delta {
            non_negative("mixture.delta", d)?;
        }
        non_negative("mixture.delta_rel", m.delta_rel)?;
        positive("mixture.tol", m.tol)?;
        if m.max_iter == 0 {
            return Err(bad("mixture.max_iter", "must be >= 1"));
        }
        self.reg_config().validate().map_err(as_config)?;
        self.step_scaling()?;
        self.step_control()?.validate().map_err(as_config)?;
        let family = self.family()?;
        if self.learning.count == 0 {
            return Err(bad("learning.count", "must be >= 1"));
        }
        if !self.learning.pool_angles && self.learning.count < m.k {
            return Err(bad("learning.count", format!("must be >= mixture.k = {}", m.k)));
        }
        ExampleSpec::new(family, self.learning.count, self.learning.seed)
            .validate()
            .map_err(as_config)?;
        if !(self.solver.tol > 0.0 && self.solver.tol < 1.0) {
            return Err(bad(
                "solver.tol",
                format!("must lie in (0, 1), got {}", self.solver.tol),
            ));
        }
        self.truth_example()?;
        for n in [g.coarse, g.fine, g.reference] {
            let grid = self.grid_spec(n)?;
            build_receivers_for(self.receivers.count, self.receivers.radius, &grid, &self.pml_profile())
                .map_err(|e| bad("receivers.radius", e.to_string()))?;
        }
        Ok(())
    }

    pub fn pml_profile(&self) -> PmlProfile {
        PmlProfile {
            sigma0: self.pml.sigma0,
            p: self.pml.p,
            d1: self.pml.d1,
            d2: self.pml.d2,
        }
    }

    pub fn omega(&self) -> Rect {
        let g = &self.grid;
        Rect::new(g.omega_x_min, g.omega_x_max, g.omega_y_min, g.omega_y_max)
    }

    /// `n x n` grid on `Omega` padded by the PML layers.
    pub fn grid_spec(&self, n: usize) -> Result<GridSpec> {
        GridSpec::with_pml(n, self.omega(), &self.pml_profile()).map_err(as_config)
    }

    pub fn receivers_for(&self, grid: &GridSpec) -> Result<ReceiverSet> {
        build_receivers_for(self.receivers.count, self.receivers.radius, grid, &self.pml_profile())
    }

    pub fn schedule(&self) -> Result<ContinuationSchedule> {
        let c = &self.continuation;
        ContinuationSchedule::uniform(c.kappa_min, c.kappa_max, c.count, c.angles).map_err(as_config)
    }

    pub fn reg_config(&self) -> RegularizerConfig {
        RegularizerConfig {
            a_scale: self.reg.a_scale,
            s: self.reg.s,
            lambda: self.reg.lambda,
            delta_tv: self.reg.delta_tv,
            weight: self.reg.weight,
        }
    }

    fn step_scaling(&self) -> Result<StepScaling> {
        match self.step.scaling.as_str() {
            "gauss_newton" => Ok(StepScaling::GaussNewton),
            "fixed" => Ok(StepScaling::Fixed),
            other => Err(bad(
                "step.scaling",
                format!("expected gauss_newton or fixed, got `{other}`"),
            )),
        }
    }

    pub fn step_control(&self) -> Result<StepControl> {
        Ok(StepControl {
            init: self.step.init,
            factor: self.step.factor,
            max_backtracks: self.step.max_backtracks,
            scaling: self.step_scaling()?,
            q_min: self.bounds.q_min,
            q_max: self.bounds.q_max,
        })
    }

    pub fn family(&self) -> Result<Family> {
        self.learning.family.parse().map_err(as_config)
    }

    pub fn example_spec(&self) -> Result<ExampleSpec> {
        Ok(ExampleSpec::new(
            self.family()?,
            self.learning.count,
            self.learning.seed,
        ))
    }

    pub fn truth_example(&self) -> Result<TruthExample> {
        match self.truth.example.as_str() {
            "example1" => Ok(TruthExample::Example1),
            "example2" => Ok(TruthExample::Example2),
            "none" => Ok(TruthExample::None),
            other => Err(bad(
                "truth.example",
                format!("expected example1, example2 or none, got `{other}`"),
            )),
        }
    }

    pub fn nu_rule(&self) -> NuRule {
        match self.noise.nu {
            Some(v) => NuRule::Absolute(v),
            None => NuRule::RelativeToData(self.noise.nu_rel),
        }
    }

    /// EM settings; `delta` defaults to `delta_rel * trace / N_d` of the samples.
    pub fn em_config(&self, samples: &crate::gmm::ErrorSampleSet) -> EmConfig {
        let m = &self.mixture;
        let delta = m.delta.unwrap_or_else(|| {
            let c = samples.pooled_covariance();
            m.delta_rel * c.trace().re / c.n.max(1) as f64
        });
        EmConfig {
            k: m.k,
            delta,
            tol: m.tol,
            max_iter: m.max_iter,
            seed: m.seed,
            max_restarts: m.max_restarts,
        }
    }

    /// Every setting as `section.key = value` lines.
    pub fn dump(&self) -> String {
        let value = toml::Value::try_from(self).expect("config serializes");
        let mut out = String::new();
        if let toml::Value::Table(sections) = value {
            for (section, body) in sections {
                if let toml::Value::Table(keys) = body {
                    for (k, v) in keys {
                        let _ = writeln!(out, "{section}.{k} = {v}");
                    }
                }
            }
        }
        out
    }
}
