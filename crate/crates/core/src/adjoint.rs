//! Mixture misfit, its residual weights and the adjoint-state data gradient.
//!
//! With `r = d - F_a(q)` and `C_k = Sigma_k + nu I`,
//!
//! ```text
//! Phi(q) = -ln sum_k pi_k N_c(r | zeta_k, C_k)
//! rho    = sum_k gamma_k(r) C_k^{-1} (r - zeta_k)
//! dPhi   = -2 Re(rho^H dF)
//! ```
//!
//! and `dF` follows from the linearized problem. The gradient returned here
//! is taken with respect to `<a, b> = hx hy sum a b`, so it is exactly
//! consistent with difference quotients of the discrete misfit.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::gmm::{FactoredMixture, MixtureModel};
use crate::grid::{ComplexField, ReceiverSet, ScattererField};
use crate::helmholtz::{DataRecord, FactoredOperator};

/// Data of one `(kappa, angle)` together with the factorized error model.
#[derive(Clone, Debug)]
pub struct MisfitContext {
    pub data: DataRecord,
    pub mixture: Arc<FactoredMixture>,
    pub nu: f64,
}

impl MisfitContext {
    /// Factorizes `Sigma_k + nu I` for every component.
    pub fn new(data: DataRecord, model: &MixtureModel, nu: f64) -> Result<Self> {
        Self::with_factored(data, Arc::new(factor_with_nu(model, nu)?), nu)
    }

    pub fn with_factored(data: DataRecord, mixture: Arc<FactoredMixture>, nu: f64) -> Result<Self> {
        if mixture.dim() != data.values.len() {
            return Err(Error::Geometry(format!(
                "error model has dimension {} but the data record has {} values",
                mixture.dim(),
                data.values.len()
            )));
        }
        Ok(Self { data, mixture, nu })
    }
}

/// Factorization of `Sigma_k + nu I`; `nu` must be non-negative.
pub fn factor_with_nu(model: &MixtureModel, nu: f64) -> Result<FactoredMixture> {
    if !(nu >= 0.0) || !nu.is_finite() {
        return Err(Error::param("noise.nu", format!("must be >= 0, got {nu}")));
    }
    model.validate()?;
    model.factor(nu)
}

fn residual(q_data: &[Complex64], ctx: &MisfitContext) -> Result<Vec<Complex64>> {
    if q_data.len() != ctx.data.values.len() {
        return Err(Error::Geometry(format!(
            "{} predicted values for {} measurements",
            q_data.len(),
            ctx.data.values.len()
        )));
    }
    Ok(ctx.data.values.iter().zip(q_data).map(|(d, f)| d - f).collect())
}

/// `Phi` for predicted receiver data `q_data`.
pub fn misfit_phi(q_data: &[Complex64], ctx: &MisfitContext) -> Result<f64> {
    let r = residual(q_data, ctx)?;
    Ok(-ctx.mixture.log_density(&r)?)
}

/// `Phi` and `rho` together.
pub fn misfit_and_weights(q_data: &[Complex64], ctx: &MisfitContext) -> Result<(f64, Vec<Complex64>)> {
    let r = residual(q_data, ctx)?;
    let (gamma, log_p) = ctx.mixture.responsibilities_with_log(&r)?;
    let mut rho = vec![Complex64::default(); r.len()];
    for (g, comp) in gamma.iter().zip(&ctx.mixture.components) {
        if *g == 0.0 {
            continue;
        }
        let w = comp.chol.solve(&comp.centered(&r));
        for (a, b) in rho.iter_mut().zip(&w) {
            *a += b * *g;
        }
    }
    Ok((-log_p, rho))
}

/// `rho = sum_k gamma_k C_k^{-1} (d - q_data - zeta_k)`.
pub fn residual_weights(q_data: &[Complex64], ctx: &MisfitContext) -> Result<Vec<Complex64>> {
    misfit_and_weights(q_data, ctx).map(|r| r.1)
}

/// Adjoint field for residual weights `rho`, reusing the forward factorization.
pub fn solve_adjoint(op: &FactoredOperator<'_>, rho: &[Complex64], receivers: &ReceiverSet) -> Result<ComplexField> {
    op.solve_adjoint(rho, receivers)
}

/// Everything produced by one gradient evaluation.
#[derive(Clone, Debug)]
pub struct DataGradient {
    pub phi: f64,
    pub gradient: ScattererField,
    /// Predicted receiver data `F_a(q)`.
    pub predicted: Vec<Complex64>,
    pub scattered: ComplexField,
    pub rho: Vec<Complex64>,
}

/// Forward solve, residual weights, adjoint solve, and the gradient
/// `-2 Re(conj(u_inc + s1 s2 u_s) v)` restricted to the support of `q`.
pub fn data_gradient(
    op: &FactoredOperator<'_>,
    angle: f64,
    receivers: &ReceiverSet,
    ctx: &MisfitContext,
) -> Result<DataGradient> {
    let (predicted, scattered) = op.forward_data(angle, receivers)?;
    let (phi, rho) = misfit_and_weights(&predicted, ctx)?;
    let grid = *op.grid();
    let mut gradient = ScattererField::zeros(grid);
    if rho.iter().any(|z| *z != Complex64::default()) {
        let v = op.solve_adjoint(&rho, receivers)?;
        let w = op.sensitivity_weight(angle, &scattered);
        let (xl, xh) = grid.support_range_x();
        let (yl, yh) = grid.support_range_y();
        for j in yl..yh {
            for i in xl..xh {
                let n = grid.index(i, j);
                gradient.values[n] = -2.0 * (w[n].conj() * v.values[n]).re;
            }
        }
    }
    Ok(DataGradient {
        phi,
        gradient,
        predicted,
        scattered,
        rho,
    })
}
