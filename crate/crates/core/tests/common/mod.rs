#![allow(dead_code)]

use std::f64::consts::PI;

use gmrlm_core::grid::{GridSpec, PmlProfile, Rect, ScattererField};
use gmrlm_core::helmholtz::HelmholtzSolver;
use num_complex::Complex64;

pub fn omega() -> Rect {
    Rect::new(-1.0, 1.0, -1.0, 1.0)
}

pub fn grid(n: usize) -> GridSpec {
    GridSpec::with_pml(n, omega(), &PmlProfile::default()).unwrap()
}

pub fn smooth_bump(g: GridSpec) -> ScattererField {
    ScattererField::supported_from_fn(g, |x, y| 0.5 * (-6.0 * ((x - 0.15).powi(2) + (y + 0.1).powi(2))).exp())
}

/// `sigma` and `d sigma / d coord` of one PML layer pair.
fn sigma_and_slope(c: f64, lo: f64, hi: f64, d: f64, pml: &PmlProfile) -> (f64, f64) {
    let (depth, sign) = if c > hi {
        (c - hi, 1.0)
    } else if c < lo {
        (lo - c, -1.0)
    } else {
        return (0.0, 0.0);
    };
    let t = depth / d;
    (
        pml.sigma0 * t.powf(pml.p),
        sign * pml.sigma0 * pml.p * t.powf(pml.p - 1.0) / d,
    )
}

/// Max-norm error of the discrete solution for the manufactured field
/// `u* = sin(pi (x - x0) / Lx) sin(pi (y - y0) / Ly)` on an `n x n` grid.
pub fn manufactured_error(n: usize, kappa: f64) -> f64 {
    manufactured_error_with(n, kappa, &PmlProfile::default())
}

pub fn manufactured_error_with(n: usize, kappa: f64, pml: &PmlProfile) -> f64 {
    let pml = *pml;
    let g = GridSpec::with_pml(n, omega(), &pml).unwrap();
    let q = smooth_bump(g);
    let inner = g.pml_interior(&pml);
    let d = g.domain;
    let (lx, ly) = (d.x_max - d.x_min, d.y_max - d.y_min);
    let i = Complex64::i();
    let exact = |x: f64, y: f64| ((PI * (x - d.x_min) / lx).sin(), (PI * (y - d.y_min) / ly).sin());
    let mut rhs = vec![Complex64::default(); g.len()];
    for jj in 1..g.ny - 1 {
        for ii in 1..g.nx - 1 {
            let (x, y) = (g.x(ii), g.y(jj));
            let (sx, dsx) = sigma_and_slope(x, inner.x_min, inner.x_max, pml.d1, &pml);
            let (sy, dsy) = sigma_and_slope(y, inner.y_min, inner.y_max, pml.d2, &pml);
            let (s1, s2) = (1.0 + i * sx, 1.0 + i * sy);
            let (ds1, ds2) = (i * dsx, i * dsy);
            let (xv, yv) = exact(x, y);
            let (ax, ay) = (PI / lx, PI / ly);
            let xp = ax * (ax * (x - d.x_min)).cos();
            let yp = ay * (ay * (y - d.y_min)).cos();
            let xpp = -ax * ax * xv;
            let ypp = -ay * ay * yv;
            let flux_x = s2 * yv * (xpp / s1 - ds1 * xp / (s1 * s1));
            let flux_y = s1 * xv * (ypp / s2 - ds2 * yp / (s2 * s2));
            let k = g.index(ii, jj);
            rhs[k] = flux_x + flux_y + s1 * s2 * kappa * kappa * (1.0 + q.values[k]) * xv * yv;
        }
    }
    let solver = HelmholtzSolver::new(g, pml, 1e-10).unwrap();
    let op = solver.factorize(&q, kappa).unwrap();
    let (u, _) = op.solve(&rhs, false).unwrap();
    let mut err: f64 = 0.0;
    for jj in 0..g.ny {
        for ii in 0..g.nx {
            let (xv, yv) = exact(g.x(ii), g.y(jj));
            err = err.max((u[g.index(ii, jj)] - xv * yv).norm());
        }
    }
    err
}

use gmrlm_core::linalg::CMat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random Hermitian positive definite matrix `B B^H + shift I`.
pub fn random_hpd(n: usize, shift: f64, seed: u64) -> CMat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = CMat::from_fn(n, |_, _| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    CMat::from_fn(n, |i, j| {
        let mut s: Complex64 = (0..n).map(|k| b.get(i, k) * b.get(j, k).conj()).sum();
        if i == j {
            s += shift;
        }
        s
    })
}

pub fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    (0..n)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}
