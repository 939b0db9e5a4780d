//! Recursive linearization over wavenumbers and incident angles, with one
//! descent step per `(kappa, angle)` visit.

use std::sync::Arc;
use std::time::Instant;

use crate::adjoint::{data_gradient, factor_with_nu, misfit_phi, MisfitContext};
use crate::error::{Error, Result};
use crate::gmm::{FactoredMixture, MixtureModel};
use crate::grid::{ReceiverSet, ScattererField};
use crate::helmholtz::{apply_noise, record_seed, DataRecord, FactoredOperator, HelmholtzSolver};
use crate::regularizer::{grad_r, grad_r_gaussian, r_value, RegularizerConfig};

/// Wavenumbers (ascending) and incident angles.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuationSchedule {
    pub kappas: Vec<f64>,
    pub angles: Vec<f64>,
}

impl ContinuationSchedule {
    /// `count` equally spaced wavenumbers from `kappa_min` to `kappa_max` and
    /// `n_angles` equally spaced angles in `[0, 2 pi)`.
    pub fn uniform(kappa_min: f64, kappa_max: f64, count: usize, n_angles: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::param("continuation.count", "must be >= 1"));
        }
        if n_angles == 0 {
            return Err(Error::param("continuation.angles", "must be >= 1"));
        }
        let kappas = if count == 1 {
            vec![kappa_min]
        } else {
            (0..count)
                .map(|j| kappa_min + (kappa_max - kappa_min) * j as f64 / (count - 1) as f64)
                .collect()
        };
        let angles = (0..n_angles)
            .map(|j| std::f64::consts::TAU * j as f64 / n_angles as f64)
            .collect();
        let s = Self { kappas, angles };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kappas.is_empty() || self.angles.is_empty() {
            return Err(Error::param(
                "continuation.count",
                "schedule needs at least one wavenumber and one angle",
            ));
        }
        if self.kappas.iter().any(|k| !(*k > 0.0) || !k.is_finite()) {
            return Err(Error::param("continuation.kappa_min", "wavenumbers must be positive"));
        }
        if self.kappas.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::param(
                "continuation.kappa_max",
                "wavenumbers must be strictly increasing",
            ));
        }
        Ok(())
    }
}

/// How the trial step of the line search is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepScaling {
    /// `init` times the minimizer of the Gauss-Newton model along `-g`.
    GaussNewton,
    /// `init` itself.
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepControl {
    pub init: f64,
    pub factor: f64,
    pub max_backtracks: usize,
    pub scaling: StepScaling,
    pub q_min: f64,
    pub q_max: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            init: 1.0,
            factor: 0.5,
            max_backtracks: 20,
            scaling: StepScaling::GaussNewton,
            q_min: -0.99,
            q_max: 10.0,
        }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<()> {
        if !(self.init > 0.0) || !self.init.is_finite() {
            return Err(Error::param("step.init", format!("must be > 0, got {}", self.init)));
        }
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::param(
                "step.factor",
                format!("must lie in (0, 1), got {}", self.factor),
            ));
        }
        if !(self.q_min > -1.0) {
            return Err(Error::param(
                "bounds.q_min",
                format!("must be > -1, got {}", self.q_min),
            ));
        }
        if !(self.q_max > self.q_min) || !self.q_max.is_finite() {
            return Err(Error::param(
                "bounds.q_max",
                format!("must exceed q_min, got {}", self.q_max),
            ));
        }
        Ok(())
    }
}

/// Outcome of one `(kappa, angle)` visit.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateRecord {
    pub kappa: f64,
    pub angle: f64,
    /// Data misfit before the update.
    pub misfit: f64,
    pub objective_before: f64,
    /// Equal to `objective_before` when the step was rejected.
    pub objective_after: f64,
    /// Accepted step length, zero when rejected.
    pub step: f64,
    pub backtracks: usize,
    pub accepted: bool,
    pub rel_error: Option<f64>,
    pub seconds: f64,
    pub warning: Option<String>,
}

#[derive(Clone, Debug)]
pub struct KappaSnapshot {
    pub kappa: f64,
    pub q: ScattererField,
    pub rel_error: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct InversionReport {
    pub records: Vec<UpdateRecord>,
    pub snapshots: Vec<KappaSnapshot>,
    pub warnings: Vec<String>,
    pub final_q: ScattererField,
}

/// `||q_true - q_est|| / ||q_true||` in the cell-area-weighted norm; `q_true`
/// is resampled onto the grid of `q_est` when the grids differ.
pub fn relative_error(q_est: &ScattererField, q_true: &ScattererField) -> Result<f64> {
    let truth = if q_true.grid == q_est.grid {
        q_true.clone()
    } else {
        q_true.restrict_supported(&q_est.grid)?
    };
    let denom = truth.norm_l2();
    if denom == 0.0 {
        return Err(Error::Degenerate("relative error against a zero scatterer".into()));
    }
    Ok(truth.axpy(-1.0, q_est).norm_l2() / denom)
}

/// Everything fixed during one inversion.
pub struct InversionSetup<'a> {
    pub solver: &'a HelmholtzSolver,
    pub receivers: &'a ReceiverSet,
    pub reg: RegularizerConfig,
    pub step: StepControl,
}

fn objective(phi: f64, q: &ScattererField, reg: &RegularizerConfig) -> f64 {
    if reg.weight == 0.0 {
        phi
    } else {
        phi + reg.weight * r_value(q, reg)
    }
}

/// Minimizer of the Gauss-Newton quadratic model along `-g`.
fn gauss_newton_step(
    op: &FactoredOperator<'_>,
    angle: f64,
    setup: &InversionSetup<'_>,
    ctx: &MisfitContext,
    scattered: &crate::grid::ComplexField,
    residual: &[num_complex::Complex64],
    g: &ScattererField,
) -> Result<f64> {
    let gg = g.dot(g);
    let du = op.solve_tangent(angle, scattered, g)?;
    let dd = setup.receivers.sample(&du)?;
    let (gamma, _) = ctx.mixture.responsibilities_with_log(residual)?;
    let mut curvature = 0.0;
    for (gk, comp) in gamma.iter().zip(&ctx.mixture.components) {
        if *gk > 0.0 {
            curvature += 2.0 * gk * comp.chol.quad_form(&dd);
        }
    }
    if setup.reg.weight > 0.0 {
        curvature += setup.reg.weight * g.dot(&grad_r_gaussian(g, &setup.reg));
    }
    if !(curvature > 0.0) || !curvature.is_finite() {
        return Ok(1.0);
    }
    Ok(gg / curvature)
}

/// One gradient step at `(kappa, angle)` from the factorization `op` of the current `q`.
///
/// Returns the new scatterer, its factorization when the step was accepted,
/// and the record.
pub fn update_step<'s>(
    setup: &'s InversionSetup<'s>,
    op: &FactoredOperator<'s>,
    angle: f64,
    ctx: &MisfitContext,
    q_true: Option<&ScattererField>,
) -> Result<(ScattererField, Option<FactoredOperator<'s>>, UpdateRecord)> {
    let start = Instant::now();
    let q = &op.q;
    if (ctx.data.kappa - op.kappa).abs() > 1e-9 * op.kappa || (ctx.data.angle - angle).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "data record (kappa {}, angle {}) does not match the visit (kappa {}, angle {angle})",
            ctx.data.kappa, ctx.data.angle, op.kappa
        )));
    }
    let dg = data_gradient(op, angle, setup.receivers, ctx)?;
    let reg = &setup.reg;
    let g = if reg.weight == 0.0 {
        dg.gradient.clone()
    } else {
        dg.gradient.axpy(reg.weight, &grad_r(q, reg))
    };
    let before = objective(dg.phi, q, reg);
    let mut record = UpdateRecord {
        kappa: op.kappa,
        angle,
        misfit: dg.phi,
        objective_before: before,
        objective_after: before,
        step: 0.0,
        backtracks: 0,
        accepted: false,
        rel_error: None,
        seconds: 0.0,
        warning: None,
    };
    let mut result = (q.clone(), None);
    if g.max_abs() == 0.0 {
        record.warning = Some("zero gradient; scatterer unchanged".into());
    } else {
        let mut alpha = setup.step.init
            * match setup.step.scaling {
                StepScaling::Fixed => 1.0,
                StepScaling::GaussNewton => {
                    let residual: Vec<_> = ctx.data.values.iter().zip(&dg.predicted).map(|(d, f)| d - f).collect();
                    gauss_newton_step(op, angle, setup, ctx, &dg.scattered, &residual, &g)?
                }
            };
        for attempt in 0..=setup.step.max_backtracks {
            let mut trial = q.axpy(-alpha, &g);
            trial.clamp(setup.step.q_min, setup.step.q_max);
            trial.apply_support();
            let trial_op = setup.solver.factorize(&trial, op.kappa)?;
            let (pred, _) = trial_op.forward_data(angle, setup.receivers)?;
            // a trial far outside the model's support can underflow every component
            let after = match misfit_phi(&pred, ctx) {
                Ok(phi) => objective(phi, &trial, reg),
                Err(Error::Degenerate(_)) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            if after < before {
                record.objective_after = after;
                record.step = alpha;
                record.backtracks = attempt;
                record.accepted = true;
                result = (trial, Some(trial_op));
                break;
            }
            alpha *= setup.step.factor;
        }
        if !record.accepted {
            record.backtracks = setup.step.max_backtracks;
            record.warning = Some(format!(
                "no descent after {} backtracks; step skipped",
                setup.step.max_backtracks
            ));
        }
    }
    if let Some(t) = q_true {
        record.rel_error = Some(relative_error(&result.0, t)?);
    }
    record.seconds = start.elapsed().as_secs_f64();
    Ok((result.0, result.1, record))
}

/// Measured data for every visit of a schedule.
#[derive(Clone, Debug, Default)]
pub struct DataSet {
    pub records: Vec<DataRecord>,
}

impl DataSet {
    pub fn find(&self, kappa: f64, angle: f64) -> Option<&DataRecord> {
        self.records
            .iter()
            .find(|r| (r.kappa - kappa).abs() <= 1e-9 * kappa && (r.angle - angle).abs() <= 1e-9)
    }

    /// Mean `|d|^2` over all records at `kappa`.
    pub fn mean_power(&self, kappa: f64) -> f64 {
        let (mut s, mut n) = (0.0, 0usize);
        for r in self.records.iter().filter(|r| (r.kappa - kappa).abs() <= 1e-9 * kappa) {
            s += r.values.iter().map(|z| z.norm_sqr()).sum::<f64>();
            n += r.values.len();
        }
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    }
}

/// Noisy data for every `(kappa, angle)` of `schedule`, one factorization per
/// wavenumber; record `(ik, ia)` uses noise seed `record_seed(seed, ik, ia)`.
pub fn synthesize_dataset(
    solver: &HelmholtzSolver,
    q_true: &ScattererField,
    schedule: &ContinuationSchedule,
    receivers: &ReceiverSet,
    noise_sigma: f64,
    seed: u64,
) -> Result<DataSet> {
    schedule.validate()?;
    let mut records = Vec::with_capacity(schedule.kappas.len() * schedule.angles.len());
    for (ik, &kappa) in schedule.kappas.iter().enumerate() {
        let op = solver.factorize(q_true, kappa)?;
        for (ia, &angle) in schedule.angles.iter().enumerate() {
            let (clean, _) = op.forward_data(angle, receivers)?;
            records.push(DataRecord {
                kappa,
                angle,
                values: apply_noise(&clean, noise_sigma, record_seed(seed, ik, ia))?,
            });
        }
    }
    Ok(DataSet { records })
}

/// Per-wavenumber error models; a missing entry means plain least squares at that level.
#[derive(Clone, Debug, Default)]
pub struct ModelSet {
    pub models: Vec<MixtureModel>,
}

impl ModelSet {
    pub fn find(&self, kappa: f64) -> Option<&MixtureModel> {
        self.models.iter().find(|m| (m.kappa_tag - kappa).abs() <= 1e-9 * kappa)
    }
}

/// Noise variance `nu` added to every component covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NuRule {
    Absolute(f64),
    /// `factor * mean |d|^2` over the records of each wavenumber.
    RelativeToData(f64),
}

impl NuRule {
    pub fn resolve(&self, data: &DataSet, kappa: f64) -> Result<f64> {
        let nu = match *self {
            NuRule::Absolute(v) => v,
            NuRule::RelativeToData(f) => f * data.mean_power(kappa),
        };
        if !(nu >= 0.0) || !nu.is_finite() {
            return Err(Error::param("noise.nu", format!("resolved to {nu}")));
        }
        Ok(nu)
    }
}

pub struct InversionInput<'a> {
    pub schedule: &'a ContinuationSchedule,
    pub data: &'a DataSet,
    /// `None` runs plain recursive linearization.
    pub models: Option<&'a ModelSet>,
    pub nu: NuRule,
    pub q_init: ScattererField,
    pub q_true: Option<&'a ScattererField>,
}

/// Runs the continuation: wavenumbers ascending, angles in schedule order,
/// one update per visit, warm-started throughout.
pub fn run_inversion(setup: &InversionSetup<'_>, input: &InversionInput<'_>) -> Result<InversionReport> {
    input.schedule.validate()?;
    setup.reg.validate()?;
    setup.step.validate()?;
    setup.receivers.check_inside(&setup.solver.grid, &setup.solver.pml)?;
    if input.q_init.grid != setup.solver.grid {
        return Err(Error::Geometry(
            "initial scatterer lives on a different grid than the solver".into(),
        ));
    }
    for &k in &input.schedule.kappas {
        for &a in &input.schedule.angles {
            let rec = input
                .data
                .find(k, a)
                .ok_or_else(|| Error::Config(format!("no data record for kappa {k}, angle {a}")))?;
            if rec.values.len() != setup.receivers.count() {
                return Err(Error::Config(format!(
                    "data record for kappa {k}, angle {a} has {} values for {} receivers",
                    rec.values.len(),
                    setup.receivers.count()
                )));
            }
        }
    }
    let mut warnings = Vec::new();
    let mut records = Vec::new();
    let mut snapshots = Vec::new();
    let mut q = input.q_init.clone();
    q.apply_support();
    for &kappa in &input.schedule.kappas {
        let nu = input.nu.resolve(input.data, kappa)?;
        let model = match input.models {
            None => MixtureModel::isotropic(setup.receivers.count(), 0.0, kappa),
            Some(set) => match set.find(kappa) {
                Some(m) => m.clone(),
                None => {
                    warnings.push(format!(
                        "no error model for kappa {kappa}; using least squares at this level"
                    ));
                    MixtureModel::isotropic(setup.receivers.count(), 0.0, kappa)
                }
            },
        };
        if model.dim() != setup.receivers.count() {
            return Err(Error::Config(format!(
                "error model for kappa {kappa} has dimension {} but there are {} receivers",
                model.dim(),
                setup.receivers.count()
            )));
        }
        let mixture: Arc<FactoredMixture> = Arc::new(factor_with_nu(&model, nu)?);
        let mut op = setup.solver.factorize(&q, kappa)?;
        for &angle in &input.schedule.angles {
            let data = input.data.find(kappa, angle).expect("checked above").clone();
            let ctx = MisfitContext::with_factored(data, mixture.clone(), nu)?;
            let (q_new, op_new, rec) = update_step(setup, &op, angle, &ctx, input.q_true)?;
            if let Some(w) = &rec.warning {
                warnings.push(format!("kappa {kappa}, angle {angle}: {w}"));
            }
            records.push(rec);
            q = q_new;
            if let Some(o) = op_new {
                op = o;
            }
        }
        let rel_error = input.q_true.map(|t| relative_error(&q, t)).transpose()?;
        snapshots.push(KappaSnapshot {
            kappa,
            q: q.clone(),
            rel_error,
        });
    }
    Ok(InversionReport {
        records,
        snapshots,
        warnings,
        final_q: q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_receivers, GridSpec, PmlProfile, Rect};
    use crate::learning::true_scatterer_example1;
    use std::f64::consts::PI;

    #[test]
    fn relative_error_examples() {
        let g = GridSpec::with_pml(33, Rect::square(1.0), &PmlProfile::default()).unwrap();
        let q = true_scatterer_example1(g);
        assert_eq!(relative_error(&q, &q).unwrap(), 0.0);
        assert_eq!(relative_error(&ScattererField::zeros(g), &q).unwrap(), 1.0);
        assert!((relative_error(&q.scaled(2.0), &q).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            relative_error(&q, &ScattererField::zeros(g)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn uniform_schedule() {
        let s = ContinuationSchedule::uniform(PI, 10.0 * PI, 10, 20).unwrap();
        assert_eq!(s.kappas.len(), 10);
        assert!((s.kappas[3] - 4.0 * PI).abs() < 1e-12);
        assert_eq!(s.angles.len(), 20);
        assert!((s.angles[5] - PI / 2.0).abs() < 1e-15);
        assert!(ContinuationSchedule {
            kappas: vec![2.0, 1.0],
            angles: vec![0.0]
        }
        .validate()
        .is_err());
    }

    struct Desk {
        solver: HelmholtzSolver,
        receivers: ReceiverSet,
        truth: ScattererField,
    }

    fn desk() -> Desk {
        let g = GridSpec::with_pml(47, Rect::square(1.0), &PmlProfile::default()).unwrap();
        Desk {
            solver: HelmholtzSolver::new(g, PmlProfile::default(), 1e-10).unwrap(),
            receivers: build_receivers(32, 1.0).unwrap(),
            truth: true_scatterer_example1(g),
        }
    }

    fn data_for(d: &Desk, q: &ScattererField, s: &ContinuationSchedule) -> DataSet {
        let mut records = Vec::new();
        for &k in &s.kappas {
            for &a in &s.angles {
                records.push(DataRecord {
                    kappa: k,
                    angle: a,
                    values: d.solver.forward_map(q, k, a, &d.receivers).unwrap(),
                });
            }
        }
        DataSet { records }
    }

    #[test]
    fn exact_data_leaves_truth_in_place() {
        let d = desk();
        let s = ContinuationSchedule::uniform(PI, PI, 1, 1).unwrap();
        let data = data_for(&d, &d.truth, &s);
        let setup = InversionSetup {
            solver: &d.solver,
            receivers: &d.receivers,
            reg: RegularizerConfig {
                weight: 0.0,
                ..Default::default()
            },
            step: StepControl::default(),
        };
        let op = d.solver.factorize(&d.truth, PI).unwrap();
        let ctx = MisfitContext::new(data.records[0].clone(), &MixtureModel::isotropic(32, 0.0, PI), 1e-6).unwrap();
        let (q_new, _, rec) = update_step(&setup, &op, 0.0, &ctx, None).unwrap();
        assert!(rec.misfit.is_finite());
        let diff = q_new.axpy(-1.0, &d.truth).max_abs();
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn one_update_reduces_error_and_objective() {
        let d = desk();
        let s = ContinuationSchedule::uniform(PI, PI, 1, 1).unwrap();
        let data = data_for(&d, &d.truth, &s);
        let setup = InversionSetup {
            solver: &d.solver,
            receivers: &d.receivers,
            reg: RegularizerConfig::default(),
            step: StepControl::default(),
        };
        let input = InversionInput {
            schedule: &s,
            data: &data,
            models: None,
            nu: NuRule::RelativeToData(1e-6),
            q_init: ScattererField::zeros(d.solver.grid),
            q_true: Some(&d.truth),
        };
        let rep = run_inversion(&setup, &input).unwrap();
        assert_eq!(rep.records.len(), 1);
        let r = &rep.records[0];
        assert!(r.accepted && r.objective_after < r.objective_before);
        assert!(r.rel_error.unwrap() < 1.0);
    }

    #[test]
    fn missing_data_is_a_config_error() {
        let d = desk();
        let s = ContinuationSchedule::uniform(PI, 2.0 * PI, 2, 2).unwrap();
        let mut data = data_for(&d, &d.truth, &ContinuationSchedule::uniform(PI, PI, 1, 2).unwrap());
        data.records.pop();
        let setup = InversionSetup {
            solver: &d.solver,
            receivers: &d.receivers,
            reg: RegularizerConfig::default(),
            step: StepControl::default(),
        };
        let input = InversionInput {
            schedule: &s,
            data: &data,
            models: None,
            nu: NuRule::RelativeToData(1e-6),
            q_init: ScattererField::zeros(d.solver.grid),
            q_true: None,
        };
        assert!(matches!(run_inversion(&setup, &input), Err(Error::Config(_))));
    }
}
