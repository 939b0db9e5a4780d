//! Finite-difference solver for the PML-truncated scattering problem
//!
//! ```text
//! div(S grad u) + s1 s2 k^2 (1 + q) u = -k^2 q u_inc   in D,   u = 0 on dD,
//! S = diag(s2/s1, s1/s2)
//! ```
//!
//! The flux coefficients are sampled at cell midpoints, which keeps the
//! scheme second order and makes the assembled matrix complex symmetric.
//! One sparse LU factorization per `(q, kappa)` serves every incident angle,
//! the adjoint (conjugated) system and the linearized system.

use std::sync::OnceLock;
use std::time::Instant;

use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, Mat};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{pml_sigma_mean, ComplexField, GridSpec, PmlProfile, ReceiverSet, ScattererField};

/// Default relative residual accepted from the linear solver.
pub const DEFAULT_SOLVER_TOL: f64 = 1e-10;

const MAX_REFINEMENT: usize = 3;

/// Diagnostics of one linear solve.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ForwardSolveReport {
    /// `||A x - b|| / ||b||` (absolute norm when `b = 0`).
    pub residual_norm: f64,
    pub refinement_steps: usize,
    pub unknowns: usize,
    pub nonzeros: usize,
    pub factor_seconds: f64,
}

/// Measured (or synthesized) receiver data for one wavenumber and incident angle.
#[derive(Clone, Debug, PartialEq)]
pub struct DataRecord {
    pub kappa: f64,
    pub angle: f64,
    pub values: Vec<Complex64>,
}

/// Plane wave `exp(i k (x cos(theta) + y sin(theta)))` at every node.
pub fn incident_field(kappa: f64, angle: f64, grid: &GridSpec) -> ComplexField {
    let (c, s) = (angle.cos(), angle.sin());
    ComplexField::from_fn(*grid, |x, y| Complex64::from_polar(1.0, kappa * (x * c + y * s)))
}

/// Nodes per wavelength of the slowest wave `2 pi / (kappa sqrt(1 + q_max))` on this grid.
pub fn points_per_wavelength(grid: &GridSpec, kappa: f64, q_max: f64) -> f64 {
    let wavelength = std::f64::consts::TAU / (kappa * (1.0 + q_max.max(0.0)).sqrt());
    wavelength / grid.hx().max(grid.hy())
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::param(
            "kappa",
            format!("wavenumber must be positive, got {kappa}"),
        ));
    }
    Ok(())
}

/// Sparse system matrix in coordinate form, rows sorted.
#[derive(Clone, Debug)]
pub struct SystemMatrix {
    pub n: usize,
    pub entries: Vec<(usize, usize, Complex64)>,
}

impl SystemMatrix {
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        let start = self.entries.partition_point(|e| e.0 < row);
        self.entries[start..]
            .iter()
            .take_while(|e| e.0 == row)
            .filter(|e| e.1 == col)
            .map(|e| e.2)
            .sum()
    }

    /// `A x`, or `conj(A) x` when `conj` is set.
    pub fn apply(&self, x: &[Complex64], conj: bool) -> Vec<Complex64> {
        let mut y = vec![Complex64::default(); self.n];
        for &(r, c, a) in &self.entries {
            let a = if conj { a.conj() } else { a };
            y[r] += a * x[c];
        }
        y
    }

    fn to_faer(&self) -> Result<SparseColMat<u32, Complex64>> {
        let triplets: Vec<_> = self
            .entries
            .iter()
            .map(|&(r, c, v)| Triplet::new(r as u32, c as u32, v))
            .collect();
        SparseColMat::try_new_from_triplets(self.n, self.n, &triplets).map_err(|e| Error::Solver {
            message: format!("sparse assembly failed: {e:?}"),
            residual: f64::NAN,
        })
    }
}

/// Per-node stretching products and midpoint flux coefficients for one grid.
struct Coefficients {
    /// `s1_i s2_j` at every node.
    s1s2: Vec<Complex64>,
    /// `s2_j / s1_{i+1/2} / hx^2`, indexed by `(i, j)` for the face between `i` and `i+1`.
    ax: Vec<Complex64>,
    /// `s1_i / s2_{j+1/2} / hy^2`, indexed by `(i, j)` for the face between `j` and `j+1`.
    by: Vec<Complex64>,
}

impl Coefficients {
    /// Stretching factors are averaged over the cell they act on: the dual cell
    /// around a node, or the primal cell between two nodes for a flux.
    fn new(grid: &GridSpec, pml: &PmlProfile) -> Result<Self> {
        let (hx, hy) = (grid.hx(), grid.hy());
        let (nx, ny) = (grid.nx, grid.ny);
        let inner = grid.pml_interior(pml);
        let (d, r) = (grid.domain, Complex64::new(1.0, 0.0));
        let avg_x = |a: f64, b: f64| -> Result<Complex64> {
            let (a, b) = (a.max(d.x_min), b.min(d.x_max));
            Ok(r + Complex64::i() * pml_sigma_mean(a, b, inner.x_min, inner.x_max, pml.d1, pml)?)
        };
        let avg_y = |a: f64, b: f64| -> Result<Complex64> {
            let (a, b) = (a.max(d.y_min), b.min(d.y_max));
            Ok(r + Complex64::i() * pml_sigma_mean(a, b, inner.y_min, inner.y_max, pml.d2, pml)?)
        };
        let sx: Vec<Complex64> = (0..nx)
            .map(|i| avg_x(grid.x(i) - 0.5 * hx, grid.x(i) + 0.5 * hx))
            .collect::<Result<_>>()?;
        let sy: Vec<Complex64> = (0..ny)
            .map(|j| avg_y(grid.y(j) - 0.5 * hy, grid.y(j) + 0.5 * hy))
            .collect::<Result<_>>()?;
        let sx_mid: Vec<Complex64> = (0..nx - 1)
            .map(|i| avg_x(grid.x(i), grid.x(i + 1)))
            .collect::<Result<_>>()?;
        let sy_mid: Vec<Complex64> = (0..ny - 1)
            .map(|j| avg_y(grid.y(j), grid.y(j + 1)))
            .collect::<Result<_>>()?;
        let mut s1s2 = vec![Complex64::default(); grid.len()];
        let mut ax = vec![Complex64::default(); grid.len()];
        let mut by = vec![Complex64::default(); grid.len()];
        for j in 0..ny {
            for i in 0..nx {
                let n = grid.index(i, j);
                s1s2[n] = sx[i] * sy[j];
                if i + 1 < nx {
                    ax[n] = sy[j] / sx_mid[i] / (hx * hx);
                }
                if j + 1 < ny {
                    by[n] = sx[i] / sy_mid[j] / (hy * hy);
                }
            }
        }
        Ok(Self { s1s2, ax, by })
    }
}

/// Assembles the discrete operator `div(S grad .) + s1 s2 k^2 (1 + q)` with
/// identity rows on the outer boundary.
pub fn assemble_operator(q: &ScattererField, kappa: f64, pml: &PmlProfile) -> Result<SystemMatrix> {
    check_kappa(kappa)?;
    let grid = q.grid;
    grid.check_pml(pml)?;
    let coef = Coefficients::new(&grid, pml)?;
    Ok(assemble_with(&grid, &coef, q, kappa))
}

fn assemble_with(grid: &GridSpec, coef: &Coefficients, q: &ScattererField, kappa: f64) -> SystemMatrix {
    let k2 = kappa * kappa;
    let mut entries = Vec::with_capacity(5 * grid.len());
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let n = grid.index(i, j);
            if grid.is_boundary(i, j) {
                entries.push((n, n, Complex64::new(1.0, 0.0)));
                continue;
            }
            let east = coef.ax[n];
            let west = coef.ax[grid.index(i - 1, j)];
            let north = coef.by[n];
            let south = coef.by[grid.index(i, j - 1)];
            let diag = coef.s1s2[n] * k2 * (1.0 + q.values[n]) - east - west - north - south;
            for (ii, jj, v) in [
                (i, j - 1, south),
                (i - 1, j, west),
                (i, j, diag),
                (i + 1, j, east),
                (i, j + 1, north),
            ] {
                if (ii, jj) == (i, j) || !grid.is_boundary(ii, jj) {
                    entries.push((n, grid.index(ii, jj), v));
                }
            }
        }
    }
    SystemMatrix { n: grid.len(), entries }
}

/// Right-hand side `-k^2 q u_inc`, zero on the boundary.
pub fn scattering_rhs(q: &ScattererField, kappa: f64, angle: f64) -> Vec<Complex64> {
    let grid = q.grid;
    let inc = incident_field(kappa, angle, &grid);
    let k2 = kappa * kappa;
    let mut b = vec![Complex64::default(); grid.len()];
    for j in 1..grid.ny - 1 {
        for i in 1..grid.nx - 1 {
            let n = grid.index(i, j);
            b[n] = -k2 * q.values[n] * inc.values[n];
        }
    }
    b
}

/// Operator and right-hand side of the scattered-field problem for one incident angle.
pub fn assemble_system(
    q: &ScattererField,
    kappa: f64,
    angle: f64,
    pml: &PmlProfile,
) -> Result<(SystemMatrix, Vec<Complex64>)> {
    let a = assemble_operator(q, kappa, pml)?;
    Ok((a, scattering_rhs(q, kappa, angle)))
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Discretization of one `(grid, pml)` pair; caches the symbolic factorization,
/// which depends only on the sparsity pattern.
pub struct HelmholtzSolver {
    pub grid: GridSpec,
    pub pml: PmlProfile,
    pub tol: f64,
    coef: Coefficients,
    symbolic: OnceLock<SymbolicLu<u32>>,
}

impl std::fmt::Debug for HelmholtzSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HelmholtzSolver")
            .field("grid", &self.grid)
            .field("pml", &self.pml)
            .field("tol", &self.tol)
            .finish()
    }
}

impl HelmholtzSolver {
    pub fn new(grid: GridSpec, pml: PmlProfile, tol: f64) -> Result<Self> {
        grid.check_pml(&pml)?;
        if !(tol > 0.0 && tol < 1.0) {
            return Err(Error::param("solver.tol", format!("must lie in (0, 1), got {tol}")));
        }
        let coef = Coefficients::new(&grid, &pml)?;
        Ok(Self {
            grid,
            pml,
            tol,
            coef,
            symbolic: OnceLock::new(),
        })
    }

    /// `s1 s2` at node `n`.
    pub fn s1s2(&self, n: usize) -> Complex64 {
        self.coef.s1s2[n]
    }

    /// Assembles and factorizes the operator at `(q, kappa)`.
    pub fn factorize(&self, q: &ScattererField, kappa: f64) -> Result<FactoredOperator<'_>> {
        check_kappa(kappa)?;
        if q.grid != self.grid {
            return Err(Error::Geometry(
                "scatterer lives on a different grid than the solver".into(),
            ));
        }
        let start = Instant::now();
        let matrix = assemble_with(&self.grid, &self.coef, q, kappa);
        let csc = matrix.to_faer()?;
        let symbolic = match self.symbolic.get() {
            Some(s) => s.clone(),
            None => {
                let s = SymbolicLu::try_new(csc.symbolic()).map_err(|e| Error::Solver {
                    message: format!("symbolic LU failed: {e:?}"),
                    residual: f64::NAN,
                })?;
                let _ = self.symbolic.set(s.clone());
                s
            }
        };
        let lu = Lu::try_new_with_symbolic(symbolic, csc.as_ref()).map_err(|e| Error::Solver {
            message: format!("numeric LU failed at kappa = {kappa}: {e:?}"),
            residual: f64::NAN,
        })?;
        Ok(FactoredOperator {
            solver: self,
            q: q.clone(),
            kappa,
            matrix,
            lu,
            factor_seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Scattered field for one incident angle.
    pub fn solve_forward(
        &self,
        q: &ScattererField,
        kappa: f64,
        angle: f64,
    ) -> Result<(ComplexField, ForwardSolveReport)> {
        self.factorize(q, kappa)?.solve_scattered(angle)
    }

    /// Receiver data `F_a(q, kappa)` for one incident angle.
    pub fn forward_map(
        &self,
        q: &ScattererField,
        kappa: f64,
        angle: f64,
        receivers: &ReceiverSet,
    ) -> Result<Vec<Complex64>> {
        let (u, _) = self.solve_forward(q, kappa, angle)?;
        receivers.sample(&u)
    }
}

/// LU factorization of the system at a fixed `(q, kappa)`.
pub struct FactoredOperator<'a> {
    pub solver: &'a HelmholtzSolver,
    pub q: ScattererField,
    pub kappa: f64,
    pub matrix: SystemMatrix,
    lu: Lu<u32, Complex64>,
    pub factor_seconds: f64,
}

impl FactoredOperator<'_> {
    pub fn grid(&self) -> &GridSpec {
        &self.solver.grid
    }

    /// Solves `A x = b` (or `conj(A) x = b`) with iterative refinement up to
    /// the solver tolerance.
    pub fn solve(&self, rhs: &[Complex64], conj: bool) -> Result<(Vec<Complex64>, ForwardSolveReport)> {
        let n = self.matrix.n;
        let flag = if conj { Conj::Yes } else { Conj::No };
        let bnorm = norm(rhs);
        let mut report = ForwardSolveReport {
            unknowns: n,
            nonzeros: self.matrix.entries.len(),
            factor_seconds: self.factor_seconds,
            ..Default::default()
        };
        if bnorm == 0.0 {
            return Ok((vec![Complex64::default(); n], report));
        }
        let mut work = Mat::<Complex64>::from_fn(n, 1, |i, _| rhs[i]);
        self.lu.solve_in_place_with_conj(flag, work.as_mut());
        let mut x: Vec<Complex64> = (0..n).map(|i| work[(i, 0)]).collect();
        let mut resid;
        loop {
            let ax = self.matrix.apply(&x, conj);
            let r: Vec<Complex64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
            resid = norm(&r) / bnorm;
            if resid <= self.solver.tol || report.refinement_steps >= MAX_REFINEMENT || !resid.is_finite() {
                break;
            }
            let mut corr = Mat::<Complex64>::from_fn(n, 1, |i, _| r[i]);
            self.lu.solve_in_place_with_conj(flag, corr.as_mut());
            for (xi, i) in x.iter_mut().zip(0..n) {
                *xi += corr[(i, 0)];
            }
            report.refinement_steps += 1;
        }
        report.residual_norm = resid;
        if !(resid <= self.solver.tol) {
            return Err(Error::Solver {
                message: format!(
                    "relative residual above tolerance {:.1e} after {} refinement steps (kappa = {})",
                    self.solver.tol, report.refinement_steps, self.kappa
                ),
                residual: resid,
            });
        }
        Ok((x, report))
    }

    fn wrap(&self, values: Vec<Complex64>) -> Result<ComplexField> {
        let field = ComplexField {
            grid: self.solver.grid,
            values,
        };
        if !field.is_finite() {
            return Err(Error::Solver {
                message: "solution contains non-finite entries".into(),
                residual: f64::NAN,
            });
        }
        Ok(field)
    }

    /// Scattered field for incident angle `angle`.
    pub fn solve_scattered(&self, angle: f64) -> Result<(ComplexField, ForwardSolveReport)> {
        let b = scattering_rhs(&self.q, self.kappa, angle);
        let (x, report) = self.solve(&b, false)?;
        Ok((self.wrap(x)?, report))
    }

    /// Receiver data for incident angle `angle`, together with the full scattered field.
    pub fn forward_data(&self, angle: f64, receivers: &ReceiverSet) -> Result<(Vec<Complex64>, ComplexField)> {
        let (u, _) = self.solve_scattered(angle)?;
        Ok((receivers.sample(&u)?, u))
    }

    /// Weight field `u_inc + s1 s2 u_s` multiplying `dq` in the linearized problem.
    pub fn sensitivity_weight(&self, angle: f64, scattered: &ComplexField) -> Vec<Complex64> {
        let inc = incident_field(self.kappa, angle, &self.solver.grid);
        inc.values
            .iter()
            .zip(&scattered.values)
            .enumerate()
            .map(|(n, (ui, us))| ui + self.solver.s1s2(n) * us)
            .collect()
    }

    /// Linearized response `du` solving `A du = -k^2 dq (u_inc + s1 s2 u_s)`.
    pub fn solve_tangent(&self, angle: f64, scattered: &ComplexField, dq: &ScattererField) -> Result<ComplexField> {
        let grid = self.solver.grid;
        let w = self.sensitivity_weight(angle, scattered);
        let k2 = self.kappa * self.kappa;
        let mut b = vec![Complex64::default(); grid.len()];
        for j in 1..grid.ny - 1 {
            for i in 1..grid.nx - 1 {
                let n = grid.index(i, j);
                b[n] = -k2 * dq.values[n] * w[n];
            }
        }
        let (x, _) = self.solve(&b, false)?;
        self.wrap(x)
    }

    /// Adjoint field `v` solving `conj(A) v = -k^2 sum_j delta(x - x_j) rho_j`,
    /// with the point sources spread by the transpose of bilinear interpolation
    /// divided by the cell area.
    pub fn solve_adjoint(&self, rho: &[Complex64], receivers: &ReceiverSet) -> Result<ComplexField> {
        let b = adjoint_source(&self.solver.grid, self.kappa, rho, receivers)?;
        let (x, _) = self.solve(&b, true)?;
        self.wrap(x)
    }
}

/// Discrete adjoint source `-k^2 M^T rho / (hx hy)`, zero on boundary rows.
pub fn adjoint_source(
    grid: &GridSpec,
    kappa: f64,
    rho: &[Complex64],
    receivers: &ReceiverSet,
) -> Result<Vec<Complex64>> {
    if rho.len() != receivers.count() {
        return Err(Error::Geometry(format!(
            "{} residual weights for {} receivers",
            rho.len(),
            receivers.count()
        )));
    }
    let scale = -kappa * kappa / grid.cell_area();
    let mut b = vec![Complex64::default(); grid.len()];
    for (&(x, y), &r) in receivers.points.iter().zip(rho) {
        for (n, w) in grid.bilinear_stencil(x, y)? {
            b[n] += r * (w * scale);
        }
    }
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            if grid.is_boundary(i, j) {
                b[grid.index(i, j)] = Complex64::default();
            }
        }
    }
    Ok(b)
}

/// Scattered field for one `(q, kappa, angle)`; one-shot convenience wrapper.
pub fn solve_forward(
    q: &ScattererField,
    kappa: f64,
    angle: f64,
    pml: &PmlProfile,
    tol: f64,
) -> Result<(ComplexField, ForwardSolveReport)> {
    HelmholtzSolver::new(q.grid, *pml, tol)?.solve_forward(q, kappa, angle)
}

/// Receiver data `F_a(q, kappa)` for one angle; one-shot convenience wrapper.
pub fn forward_map(
    q: &ScattererField,
    kappa: f64,
    angle: f64,
    receivers: &ReceiverSet,
    pml: &PmlProfile,
    tol: f64,
) -> Result<Vec<Complex64>> {
    HelmholtzSolver::new(q.grid, *pml, tol)?.forward_map(q, kappa, angle, receivers)
}

/// Multiplies each value by `1 + sigma r_j` with `r_j ~ U[-1, 1]` drawn from a
/// generator seeded with `seed`.
pub fn apply_noise(clean: &[Complex64], noise_sigma: f64, seed: u64) -> Result<Vec<Complex64>> {
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::param("noise.sigma", format!("must be >= 0, got {noise_sigma}")));
    }
    if noise_sigma == 0.0 {
        return Ok(clean.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(clean
        .iter()
        .map(|&d| {
            let r: f64 = rng.random_range(-1.0..=1.0);
            d * (1.0 + noise_sigma * r)
        })
        .collect())
}

/// Noisy synthetic data from a reference-grid solve of `q_true`.
pub fn synthesize_data(
    solver: &HelmholtzSolver,
    q_true: &ScattererField,
    kappa: f64,
    angle: f64,
    receivers: &ReceiverSet,
    noise_sigma: f64,
    seed: u64,
) -> Result<DataRecord> {
    let clean = solver.forward_map(q_true, kappa, angle, receivers)?;
    Ok(DataRecord {
        kappa,
        angle,
        values: apply_noise(&clean, noise_sigma, seed)?,
    })
}

/// Seed for the record at wavenumber index `ik` and angle index `ia`, derived from a base seed.
pub fn record_seed(base: u64, ik: usize, ia: usize) -> u64 {
    // splitmix64 finalizer over the packed indices
    let mut z = base ^ ((ik as u64) << 32 | ia as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_receivers, Rect};
    use std::f64::consts::PI;

    fn grid(n: usize) -> GridSpec {
        GridSpec::with_pml(n, Rect::square(1.0), &PmlProfile::default()).unwrap()
    }

    fn bump(g: GridSpec) -> ScattererField {
        ScattererField::supported_from_fn(g, |x, y| 0.4 * (-8.0 * ((x - 0.2).powi(2) + (y + 0.1).powi(2))).exp())
    }

    #[test]
    fn incident_field_values() {
        let g = GridSpec::new(5, 5, Rect::square(2.0), Rect::square(1.0)).unwrap();
        let u = incident_field(PI, 0.0, &g);
        assert!((u.at(2, 2) - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((u.at(3, 2) - Complex64::new(-1.0, 0.0)).norm() < 1e-14);
        let v = incident_field(PI, PI / 2.0, &g);
        assert!((v.at(3, 2) - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        assert!(u.values.iter().all(|z| (z.norm() - 1.0).abs() < 1e-14));
    }

    #[test]
    fn zero_scatterer_gives_zero_rhs_and_field() {
        let g = grid(33);
        let q = ScattererField::zeros(g);
        let (_, b) = assemble_system(&q, PI, 0.3, &PmlProfile::default()).unwrap();
        assert!(b.iter().all(|z| *z == Complex64::default()));
        let (u, rep) = solve_forward(&q, PI, 0.3, &PmlProfile::default(), 1e-10).unwrap();
        assert_eq!(u.max_abs(), 0.0);
        assert_eq!(rep.residual_norm, 0.0);
    }

    #[test]
    fn interior_stencil_is_five_point_laplacian() {
        let g = grid(33);
        let q = ScattererField::zeros(g);
        let a = assemble_operator(&q, 2.0, &PmlProfile::default()).unwrap();
        let (i, j) = (16, 16);
        let n = g.index(i, j);
        let (hx, hy) = (g.hx(), g.hy());
        let diag = a.get(n, n);
        assert!((diag - Complex64::new(-2.0 / (hx * hx) - 2.0 / (hy * hy) + 4.0, 0.0)).norm() < 1e-9);
        assert!((a.get(n, g.index(i + 1, j)) - Complex64::new(1.0 / (hx * hx), 0.0)).norm() < 1e-9);
        assert!((a.get(n, g.index(i, j - 1)) - Complex64::new(1.0 / (hy * hy), 0.0)).norm() < 1e-9);
    }

    #[test]
    fn operator_is_complex_symmetric() {
        let g = grid(17);
        let q = bump(g);
        let a = assemble_operator(&q, 3.0, &PmlProfile::default()).unwrap();
        for &(r, c, v) in &a.entries {
            assert!((a.get(c, r) - v).norm() <= 1e-12 * v.norm(), "({r},{c})");
        }
        // and not Hermitian inside the PML
        let corner = g.index(1, 1);
        assert!(a.get(corner, corner).im.abs() > 0.0);
    }

    #[test]
    fn residual_contract_and_boundary_zero() {
        let g = grid(41);
        let q = bump(g);
        let solver = HelmholtzSolver::new(g, PmlProfile::default(), 1e-10).unwrap();
        let (u, rep) = solver.solve_forward(&q, 2.0 * PI, 0.7).unwrap();
        assert!(rep.residual_norm <= 1e-10);
        for j in 0..g.ny {
            for i in 0..g.nx {
                if g.is_boundary(i, j) {
                    assert_eq!(u.at(i, j), Complex64::default());
                }
            }
        }
        assert!(u.max_abs() > 1e-3);
    }

    #[test]
    fn receiver_on_node_matches_nodal_value() {
        let g = grid(47);
        let q = bump(g);
        let (u, _) = solve_forward(&q, PI, 0.0, &PmlProfile::default(), 1e-10).unwrap();
        let rx = ReceiverSet {
            points: vec![(g.x(10), g.y(30))],
        };
        let d = forward_map(&q, PI, 0.0, &rx, &PmlProfile::default(), 1e-10).unwrap();
        assert_eq!(d[0], u.at(10, 30));
    }

    #[test]
    fn noise_bounds_and_determinism() {
        let clean: Vec<Complex64> = (0..50).map(|k| Complex64::new(k as f64, 1.0 - k as f64)).collect();
        assert_eq!(apply_noise(&clean, 0.0, 7).unwrap(), clean);
        let a = apply_noise(&clean, 0.02, 42).unwrap();
        let b = apply_noise(&clean, 0.02, 42).unwrap();
        assert_eq!(a, b);
        for (n, c) in a.iter().zip(&clean) {
            assert!(n.norm() <= 1.02 * c.norm() + 1e-15);
            // one real multiplier per value: the phase is preserved
            assert!((n.re * c.im - n.im * c.re).abs() < 1e-12 * (1.0 + c.norm_sqr()));
        }
        assert_ne!(apply_noise(&clean, 0.02, 43).unwrap(), a);
        assert!(apply_noise(&clean, -0.1, 1).is_err());
    }

    #[test]
    fn rejects_nonpositive_kappa() {
        let q = ScattererField::zeros(grid(9));
        assert!(matches!(
            assemble_operator(&q, 0.0, &PmlProfile::default()),
            Err(Error::Parameter { .. })
        ));
    }

    #[test]
    fn tangent_matches_difference_quotient() {
        let g = grid(33);
        let q = bump(g);
        let rx = build_receivers(16, 0.9).unwrap();
        let dq = ScattererField::supported_from_fn(g, |x, y| (3.0 * x).sin() * (2.0 * y).cos());
        let solver = HelmholtzSolver::new(g, PmlProfile::default(), 1e-12).unwrap();
        let fac = solver.factorize(&q, PI).unwrap();
        let (_, u) = fac.forward_data(0.4, &rx).unwrap();
        let du = rx.sample(&fac.solve_tangent(0.4, &u, &dq).unwrap()).unwrap();
        let eps = 1e-5;
        let plus = solver.forward_map(&q.axpy(eps, &dq), PI, 0.4, &rx).unwrap();
        let minus = solver.forward_map(&q.axpy(-eps, &dq), PI, 0.4, &rx).unwrap();
        for k in 0..rx.count() {
            let fd = (plus[k] - minus[k]) / (2.0 * eps);
            assert!((fd - du[k]).norm() < 1e-6 * (1.0 + du[k].norm()), "{fd} vs {}", du[k]);
        }
    }

    #[test]
    fn born_remainder_is_quadratic() {
        let g = grid(33);
        let rx = build_receivers(12, 1.0).unwrap();
        let dq = bump(g);
        let solver = HelmholtzSolver::new(g, PmlProfile::default(), 1e-12).unwrap();
        let zero = ScattererField::zeros(g);
        let fac = solver.factorize(&zero, PI).unwrap();
        let (_, u0) = fac.forward_data(0.2, &rx).unwrap();
        let born = rx.sample(&fac.solve_tangent(0.2, &u0, &dq).unwrap()).unwrap();
        let remainder = |eps: f64| {
            let d = solver.forward_map(&dq.scaled(eps), PI, 0.2, &rx).unwrap();
            d.iter()
                .zip(&born)
                .map(|(a, b)| (a - eps * b).norm_sqr())
                .sum::<f64>()
                .sqrt()
        };
        let (r1, r2) = (remainder(1e-2), remainder(5e-3));
        assert!(r1 > 0.0);
        let ratio = r1 / r2;
        assert!((3.8..4.2).contains(&ratio), "ratio {ratio}");
    }
}
